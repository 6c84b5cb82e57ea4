#include "prism/model.hpp"

#include <cstring>
#include <fstream>

namespace prism::model {

namespace {

constexpr char kMagic[9] = {'P', 'R', 'I', 'S', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kFormatVersion = 1;

void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) throw ValidationError("checkpoint truncated");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw ValidationError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ValidationError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams<float>& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof(kMagic));
  out.put(static_cast<char>(kFormatVersion));
  std::string config_json = cfg.to_json().dump();
  write_u32(out, static_cast<std::uint32_t>(config_json.size()));
  out.write(config_json.data(), static_cast<std::streamsize>(config_json.size()));

  for_each_param(const_cast<ModelParams<float>&>(params), [&](const std::string& name, auto& arr) {
    write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const bool is_vector = arr.rows() == 1;
    out.put(static_cast<char>(is_vector ? 1 : 2));
    if (is_vector) {
      write_u64(out, static_cast<std::uint64_t>(arr.cols()));
    } else {
      write_u64(out, static_cast<std::uint64_t>(arr.rows()));
      write_u64(out, static_cast<std::uint64_t>(arr.cols()));
    }
    out.write(reinterpret_cast<const char*>(arr.data()),
              static_cast<std::streamsize>(sizeof(float) * arr.size()));
  });
  if (!out) throw IoError("checkpoint write failed: " + path.string());
}

std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint: " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("checkpoint magic mismatch: " + path.string());
  }
  int version = in.get();
  if (version != kFormatVersion) {
    throw ValidationError("checkpoint version mismatch: got " + std::to_string(version));
  }
  std::uint32_t config_len = read_u32(in);
  std::string config_json(config_len, '\0');
  if (!in.read(config_json.data(), config_len)) throw ValidationError("checkpoint truncated");
  ModelConfig cfg = ModelConfig::from_json(nlohmann::json::parse(config_json));

  ModelParams<float> params = make_params<float>(cfg);
  for_each_param(params, [&](const std::string& name, auto& arr) {
    std::uint16_t name_len = read_u16(in);
    std::string stored(name_len, '\0');
    if (!in.read(stored.data(), name_len)) throw ValidationError("checkpoint truncated");
    if (stored != name) {
      throw ValidationError("checkpoint array order mismatch: expected " + name + ", got " + stored);
    }
    int rank = in.get();
    if (rank != 1 && rank != 2) throw ValidationError("checkpoint bad rank for " + name);
    std::uint64_t rows = 1, cols;
    if (rank == 2) {
      rows = read_u64(in);
      cols = read_u64(in);
    } else {
      cols = read_u64(in);
    }
    if (static_cast<std::int64_t>(rows) != arr.rows() || static_cast<std::int64_t>(cols) != arr.cols()) {
      throw ValidationError("checkpoint shape mismatch for " + name);
    }
    if (!in.read(reinterpret_cast<char*>(arr.data()),
                 static_cast<std::streamsize>(sizeof(float) * arr.size()))) {
      throw ValidationError("checkpoint truncated in " + name);
    }
  });
  return {cfg, std::move(params)};
}

std::pair<ModelConfig, ModelParams<float>> load_checkpoint(const std::filesystem::path& path,
                                                           const ModelConfig& expected) {
  auto loaded = load_checkpoint(path);
  if (!(loaded.first == expected)) {
    throw ValidationError("checkpoint config does not match declared config: " + path.string());
  }
  return loaded;
}

}  // namespace prism::model
