#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/model.hpp"
#include "prism/vocab.hpp"

namespace prism::gen {

enum class Strategy { Greedy, TopK };

struct GenerationRequest {
  std::string name;
  std::vector<std::string> prompt;
  int max_new_tokens = 15;
  Strategy strategy = Strategy::Greedy;
  int k = 10;
  double temperature = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  static GenerationRequest from_json(const nlohmann::json& j);
};

// Softmax of the final-position logits with [PAD] masked to zero and the rest
// renormalized. Prompts at or beyond the context window keep only their final
// max_seq_len - 1 tokens.
struct NextDistribution {
  std::vector<double> probs;  // indexed by vocabulary id, sums to 1, probs[0] == 0
  bool prompt_all_unknown = false;
};

NextDistribution next_token_distribution(const model::ModelConfig& cfg,
                                         const model::ModelParams<float>& params,
                                         const vocab::Vocabulary& vocab,
                                         std::span<const std::string> prompt);

// Greedy: argmax, probability ties broken by lexicographically smaller token.
// Top-k: temperature-scale, renormalize the k most probable entries, sample.
std::int32_t sample_next(std::span<const double> probs, Strategy strategy, int k, double temperature,
                         Rng& rng, const vocab::Vocabulary& vocab);

struct StepRecord {
  std::string token;
  double prob = 0;
  std::vector<std::pair<std::string, double>> top5;
};

struct GenerationResult {
  std::string name;
  std::vector<std::string> prompt;
  std::vector<std::string> generated;
  std::vector<StepRecord> steps;
  bool prompt_all_unknown = false;
  std::size_t n_unknown_generated = 0;
};

GenerationResult generate(const model::ModelConfig& cfg, const model::ModelParams<float>& params,
                          const vocab::Vocabulary& vocab, const GenerationRequest& request);

// JSON-lines scenario file, one GenerationRequest per line. Malformed lines
// are reported with their line number; the remaining scenarios still run.
nlohmann::ordered_json run_scenarios(const std::filesystem::path& scenario_path,
                                     const model::ModelConfig& cfg,
                                     const model::ModelParams<float>& params,
                                     const vocab::Vocabulary& vocab,
                                     std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace prism::gen
