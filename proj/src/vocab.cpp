#include "prism/vocab.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "prism/errors.hpp"

namespace prism::vocab {

std::map<std::string, std::uint64_t> count_frequencies(std::span<const timeline::TokenDocument> docs) {
  std::map<std::string, std::uint64_t> counts;
  for (const auto& doc : docs) {
    for (const auto& token : doc.tokens) counts[token]++;
  }
  return counts;
}

void Vocabulary::insert(const std::string& token) {
  token_to_id_.emplace(token, static_cast<std::int32_t>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

Vocabulary Vocabulary::build(const std::map<std::string, std::uint64_t>& counts, std::size_t max_size) {
  if (max_size < 2) throw ConfigError("vocab max_size must be >= 2 to hold [PAD] and [UNK]");
  Vocabulary v;
  v.insert(std::string(kPadToken));
  v.insert(std::string(kUnkToken));

  std::vector<std::pair<std::string, std::uint64_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (const auto& [token, count] : ranked) {
    if (v.size() >= max_size) break;
    if (token == kPadToken || token == kUnkToken) continue;
    v.insert(token);
  }
  return v;
}

std::string Vocabulary::to_json_string() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    j[id_to_token_[i]] = i;
  }
  return j.dump();
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocabulary: " + path.string());
  out << to_json_string();
  if (!out) throw IoError("vocabulary write failed: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocabulary: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed vocabulary JSON in " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ValidationError("vocabulary must be a JSON object");

  std::vector<std::string> by_id(j.size());
  std::vector<bool> seen(j.size(), false);
  for (const auto& [token, idx] : j.items()) {
    if (!idx.is_number_integer()) throw ValidationError("vocabulary index not an integer for " + token);
    auto id = idx.get<std::int64_t>();
    if (id < 0 || id >= static_cast<std::int64_t>(j.size())) {
      throw ValidationError("vocabulary indices not contiguous: " + token + " -> " + std::to_string(id));
    }
    if (seen[static_cast<std::size_t>(id)]) {
      throw ValidationError("vocabulary duplicate index " + std::to_string(id));
    }
    seen[static_cast<std::size_t>(id)] = true;
    by_id[static_cast<std::size_t>(id)] = token;
  }
  if (by_id.size() < 2 || by_id[0] != kPadToken || by_id[1] != kUnkToken) {
    throw ValidationError("vocabulary must map [PAD]=0 and [UNK]=1");
  }
  Vocabulary v;
  for (const auto& token : by_id) v.insert(token);
  return v;
}

std::optional<std::int32_t> Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw ValidationError("token id out of range: " + std::to_string(id));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<std::int32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& token : tokens) {
    auto id = lookup(token);
    ids.push_back(id ? *id : kUnkId);
  }
  return ids;
}

std::vector<std::string> Vocabulary::decode(std::span<const std::int32_t> ids) const {
  std::vector<std::string> tokens;
  tokens.reserve(ids.size());
  for (auto id : ids) tokens.push_back(token_of(id));
  return tokens;
}

}  // namespace prism::vocab
