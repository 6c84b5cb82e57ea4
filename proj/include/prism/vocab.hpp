#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "prism/timeline.hpp"

namespace prism::vocab {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::string_view kPadToken = "[PAD]";
inline constexpr std::string_view kUnkToken = "[UNK]";

std::map<std::string, std::uint64_t> count_frequencies(std::span<const timeline::TokenDocument> docs);

// Bijective token<->index mapping with [PAD]=0 and [UNK]=1 reserved; content
// tokens fill indices 2.. by descending count, ties broken lexicographically.
class Vocabulary {
 public:
  Vocabulary() = default;  // empty; fill via build or load
  static Vocabulary build(const std::map<std::string, std::uint64_t>& counts, std::size_t max_size);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string to_json_string() const;  // keys in index order, compact

  std::size_t size() const { return id_to_token_.size(); }
  std::optional<std::int32_t> lookup(const std::string& token) const;
  const std::string& token_of(std::int32_t id) const;

  std::vector<std::int32_t> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const std::int32_t> ids) const;

 private:
  void insert(const std::string& token);

  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::vector<std::string> id_to_token_;
};

}  // namespace prism::vocab
