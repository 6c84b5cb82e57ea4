#include "prism/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <vector>

#include "prism/errors.hpp"

namespace prism::manifest {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void hash_bytes(std::uint64_t& h, const char* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
}

void hash_file(std::uint64_t& h, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot hash: " + path.string());
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    hash_bytes(h, buf, static_cast<std::size_t>(in.gcount()));
  }
}

}  // namespace

bool is_manifest_file(const std::filesystem::path& path) {
  std::string name = path.filename().string();
  return name == "manifest.json" || name.ends_with(".manifest.json");
}

std::uint64_t hash_tree(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::uint64_t h = kFnvOffset;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file() && !is_manifest_file(entry.path())) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      std::string rel = fs::relative(file, path).generic_string();
      hash_bytes(h, rel.data(), rel.size());
      hash_bytes(h, "\0", 1);
      hash_file(h, file);
      hash_bytes(h, "\xff", 1);
    }
  } else if (fs::exists(path)) {
    hash_file(h, path);
  } else {
    throw IoError("cannot hash missing path: " + path.string());
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string tree_hash_hex(const std::filesystem::path& path) { return hash_hex(hash_tree(path)); }

RunManifest::RunManifest(std::string subcommand, std::uint64_t seed) {
  body_["subcommand"] = std::move(subcommand);
  body_["seed"] = seed;
  body_["config"] = nlohmann::ordered_json::object();
  body_["inputs"] = nlohmann::ordered_json::object();
  body_["outputs"] = nlohmann::ordered_json::object();
}

void RunManifest::set_config(nlohmann::ordered_json config) { body_["config"] = std::move(config); }

void RunManifest::add_input(const std::string& label, const std::filesystem::path& path) {
  body_["inputs"][label] = {{"path", path.generic_string()}, {"hash", tree_hash_hex(path)}};
}

void RunManifest::add_output(const std::string& label, const std::filesystem::path& path) {
  body_["outputs"][label] = {{"path", path.generic_string()}, {"hash", tree_hash_hex(path)}};
}

nlohmann::ordered_json RunManifest::to_json() const { return body_; }

void RunManifest::write(const std::filesystem::path& manifest_path) const {
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest: " + manifest_path.string());
  out << body_.dump(2) << "\n";
  if (!out) throw IoError("manifest write failed: " + manifest_path.string());
}

}  // namespace prism::manifest
