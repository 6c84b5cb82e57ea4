#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace prism::manifest {

// FNV-1a over a file, or over a directory tree as (relative path, contents)
// pairs in sorted path order. Manifest files themselves are excluded so a
// stage's recorded output hash equals the next stage's input hash.
std::uint64_t hash_tree(const std::filesystem::path& path);
std::string hash_hex(std::uint64_t h);
std::string tree_hash_hex(const std::filesystem::path& path);

bool is_manifest_file(const std::filesystem::path& path);

// Every run writes one of these next to its outputs; re-running with an
// identical manifest must reproduce identical output hashes.
class RunManifest {
 public:
  RunManifest(std::string subcommand, std::uint64_t seed);

  void set_config(nlohmann::ordered_json config);
  void add_input(const std::string& label, const std::filesystem::path& path);
  void add_output(const std::string& label, const std::filesystem::path& path);

  nlohmann::ordered_json to_json() const;
  void write(const std::filesystem::path& manifest_path) const;

 private:
  nlohmann::ordered_json body_;
};

}  // namespace prism::manifest
