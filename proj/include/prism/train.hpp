#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/model.hpp"
#include "prism/rng.hpp"

namespace prism::train {

struct TrainConfig {
  double lr = 5e-4;
  int batch_size = 8;
  int epochs = 5;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  std::uint64_t seed = 1;
  bool clip_gradients = false;
  double clip_norm = 1.0;

  void validate() const;
  nlohmann::ordered_json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  static TrainConfig load(const std::filesystem::path& path);
};

template <typename T>
struct SplitResult {
  std::vector<T> train, val, test;
};

// Seeded shuffle, then val/test take max(1, floor(fraction * n)) each and the
// remainder trains. Partitions are disjoint and exhaustive.
template <typename T>
SplitResult<T> split_corpus(const std::vector<T>& docs, const std::array<double, 3>& split,
                            std::uint64_t seed) {
  if (docs.size() < 3) throw ConfigError("split requires at least 3 documents");
  double sum = split[0] + split[1] + split[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  for (double f : split) {
    if (f <= 0) throw ConfigError("split fractions must be positive");
  }
  const std::size_t n = docs.size();
  std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(split[1] * static_cast<double>(n)));
  std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(split[2] * static_cast<double>(n)));
  if (n_val + n_test >= n) throw ConfigError("split leaves no training documents");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x73706c69));
  rng.shuffle(order);

  SplitResult<T> result;
  std::size_t n_train = n - n_val - n_test;
  for (std::size_t i = 0; i < n; ++i) {
    const T& doc = docs[order[i]];
    if (i < n_train) {
      result.train.push_back(doc);
    } else if (i < n_train + n_val) {
      result.val.push_back(doc);
    } else {
      result.test.push_back(doc);
    }
  }
  return result;
}

// Right-pad with [PAD]=0 or keep the first target_len ids.
std::vector<std::int32_t> pad_or_truncate(std::span<const std::int32_t> ids, int target_len);

struct AdamWState {
  model::ModelParams<float> m;
  model::ModelParams<float> v;
  std::int64_t step = 0;

  static AdamWState init(const model::ModelConfig& cfg) {
    return {model::make_params<float>(cfg), model::make_params<float>(cfg), 0};
  }
};

// Decoupled weight decay applied separately from the bias-corrected adaptive
// step. Throws on non-finite gradients, naming the offending array.
void adamw_step(model::ModelParams<float>& params, const model::ModelParams<float>& grads,
                AdamWState& state, const TrainConfig& config);

struct EvalMetrics {
  double loss = 0;        // nats per non-pad target
  double ppl = 0;         // e^loss
  double bits_per_token = 0;
  double bits_removed = 0;  // log2(vocab) - bits_per_token
};

EvalMetrics metrics_from_loss(double loss, int vocab_size);

// Masked cross entropy averaged over every non-pad next-token target in the
// dataset (global mean, fixed batch order).
EvalMetrics evaluate(const model::ModelConfig& cfg, const model::ModelParams<float>& params,
                     std::span<const std::vector<std::int32_t>> docs, int batch_size);

double train_epoch(const model::ModelConfig& cfg, model::ModelParams<float>& params,
                   std::span<const std::vector<std::int32_t>> docs, AdamWState& state,
                   const TrainConfig& config, int epoch_index);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0;
  double train_ppl = 0;
  double val_loss = 0;
  double val_ppl = 0;
  bool is_best = false;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  int best_epoch = 0;

  nlohmann::ordered_json to_json() const;
};

// Lowest-validation-loss checkpointing rule, separated so the selection logic
// can be tested on injected loss sequences.
class BestCheckpointTracker {
 public:
  // True iff `val_loss` is strictly lower than every previous observation.
  bool observe(int epoch, double val_loss) {
    if (best_epoch_ == 0 || val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
      saves_++;
      return true;
    }
    return false;
  }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int saves() const { return saves_; }

 private:
  double best_loss_ = 0;
  int best_epoch_ = 0;
  int saves_ = 0;
};

// Full loop: split, train, validate each epoch, checkpoint on new lowest
// validation loss. Writes the report JSON when report_path is given.
TrainReport fit(const std::vector<std::vector<std::int32_t>>& corpus, const model::ModelConfig& model_cfg,
                const TrainConfig& train_cfg, const std::filesystem::path& checkpoint_path,
                const std::optional<std::filesystem::path>& report_path = std::nullopt);

}  // namespace prism::train
