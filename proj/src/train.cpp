#include "prism/train.hpp"

#include <cmath>
#include <fstream>

namespace prism::train {

void TrainConfig::validate() const {
  if (lr < 0) throw ConfigError("lr must be nonnegative");
  if (batch_size < 1 || epochs < 1) throw ConfigError("batch_size and epochs must be positive");
  if (weight_decay < 0) throw ConfigError("weight_decay must be nonnegative");
  if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1) throw ConfigError("betas must be in (0, 1)");
  if (eps <= 0) throw ConfigError("eps must be positive");
  double sum = split[0] + split[1] + split[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split must sum to 1");
  for (double f : split) {
    if (f <= 0) throw ConfigError("split fractions must be positive");
  }
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"batch_size", batch_size},
          {"epochs", epochs},
          {"weight_decay", weight_decay},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"split", split},
          {"seed", seed},
          {"clip_gradients", clip_gradients},
          {"clip_norm", clip_norm}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.value("lr", 5e-4);
  c.batch_size = j.value("batch_size", 8);
  c.epochs = j.value("epochs", 5);
  c.weight_decay = j.value("weight_decay", 0.01);
  c.beta1 = j.value("beta1", 0.9);
  c.beta2 = j.value("beta2", 0.999);
  c.eps = j.value("eps", 1e-8);
  if (j.contains("split")) {
    auto s = j.at("split");
    c.split = {s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()};
  }
  c.seed = j.value("seed", std::uint64_t{1});
  c.clip_gradients = j.value("clip_gradients", false);
  c.clip_norm = j.value("clip_norm", 1.0);
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open train config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad train config JSON in " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<std::int32_t> pad_or_truncate(std::span<const std::int32_t> ids, int target_len) {
  if (target_len < 1) throw ConfigError("pad_or_truncate target_len must be >= 1");
  std::vector<std::int32_t> out(static_cast<std::size_t>(target_len), 0);
  std::size_t n = std::min(ids.size(), static_cast<std::size_t>(target_len));
  std::copy(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n), out.begin());
  return out;
}

void adamw_step(model::ModelParams<float>& params, const model::ModelParams<float>& grads,
                AdamWState& state, const TrainConfig& config) {
  config.validate();
  state.step++;
  const double t = static_cast<double>(state.step);
  const float bc1 = static_cast<float>(1.0 - std::pow(config.beta1, t));
  const float bc2 = static_cast<float>(1.0 - std::pow(config.beta2, t));
  const float lr = static_cast<float>(config.lr);
  const float wd = static_cast<float>(config.weight_decay);
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  const float eps = static_cast<float>(config.eps);

  float clip_scale = 1.0f;
  auto& mutable_grads = const_cast<model::ModelParams<float>&>(grads);
  if (config.clip_gradients) {
    double sq_sum = 0;
    model::for_each_param(mutable_grads, [&](const std::string&, auto& g) {
      sq_sum += static_cast<double>(g.squaredNorm());
    });
    double norm = std::sqrt(sq_sum);
    if (norm > config.clip_norm) clip_scale = static_cast<float>(config.clip_norm / norm);
  }

  model::for_each_param(mutable_grads, [&](const std::string& name, auto& g) {
    if (!g.allFinite()) throw ValidationError("non-finite gradient in " + name);
  });

  std::size_t slot = 0;
  std::vector<std::pair<void*, void*>> moments;
  model::for_each_param_pair(state.m, state.v, [&](const std::string&, auto& m, auto& v) {
    moments.emplace_back(&m, &v);
  });
  model::for_each_param_pair(params, mutable_grads, [&](const std::string&, auto& p, auto& g) {
    using ArrT = std::remove_reference_t<decltype(p)>;
    auto& m = *static_cast<ArrT*>(moments[slot].first);
    auto& v = *static_cast<ArrT*>(moments[slot].second);
    slot++;
    if (wd > 0) p *= (1.0f - lr * wd);  // decoupled decay, before the adaptive step
    auto grad = (g * clip_scale).eval();
    m = b1 * m + (1.0f - b1) * grad;
    v = (b2 * v.array() + (1.0f - b2) * grad.array().square()).matrix();
    auto m_hat = (m / bc1).eval();
    auto v_hat = (v / bc2).eval();
    p.array() -= lr * m_hat.array() / (v_hat.array().sqrt() + eps);
  });
}

EvalMetrics metrics_from_loss(double loss, int vocab_size) {
  EvalMetrics m;
  m.loss = loss;
  m.ppl = std::exp(loss);
  m.bits_per_token = loss / std::log(2.0);
  m.bits_removed = std::log2(static_cast<double>(vocab_size)) - m.bits_per_token;
  return m;
}

namespace {

struct Batch {
  std::vector<std::int32_t> inputs;   // [B, T] row-major
  std::vector<std::int32_t> targets;  // [B, T], pad where no target
  int batch = 0;
  int seq_len = 0;
  std::int64_t n_active = 0;
};

// Next-token pairs: logits at position t are scored against ids[t+1]. Columns
// past the longest (truncated) document in the batch would carry only pad
// targets, which contribute nothing, so they are dropped for speed.
Batch make_batch(std::span<const std::vector<std::int32_t>> docs, std::span<const std::size_t> indices,
                 int target_len) {
  int max_len = 0;
  for (std::size_t idx : indices) {
    max_len = std::max(max_len, static_cast<int>(std::min<std::size_t>(docs[idx].size(),
                                                                       static_cast<std::size_t>(target_len))));
  }
  Batch b;
  b.batch = static_cast<int>(indices.size());
  b.seq_len = std::max(1, max_len - 1);
  b.inputs.assign(static_cast<std::size_t>(b.batch) * b.seq_len, 0);
  b.targets.assign(static_cast<std::size_t>(b.batch) * b.seq_len, 0);
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const auto& doc = docs[indices[row]];
    const int len = static_cast<int>(std::min<std::size_t>(doc.size(), static_cast<std::size_t>(target_len)));
    for (int t = 0; t < b.seq_len; ++t) {
      std::size_t at = row * static_cast<std::size_t>(b.seq_len) + static_cast<std::size_t>(t);
      b.inputs[at] = t < len ? doc[static_cast<std::size_t>(t)] : 0;
      b.targets[at] = t + 1 < len ? doc[static_cast<std::size_t>(t + 1)] : 0;
      if (b.targets[at] != 0) b.n_active++;
    }
  }
  return b;
}

}  // namespace

EvalMetrics evaluate(const model::ModelConfig& cfg, const model::ModelParams<float>& params,
                     std::span<const std::vector<std::int32_t>> docs, int batch_size) {
  if (docs.empty()) throw ValidationError("evaluate: empty dataset");
  if (batch_size < 1) throw ConfigError("evaluate: batch_size must be positive");
  double total = 0;
  std::int64_t count = 0;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < docs.size(); start += static_cast<std::size_t>(batch_size)) {
    indices.clear();
    for (std::size_t i = start; i < std::min(docs.size(), start + static_cast<std::size_t>(batch_size)); ++i) {
      indices.push_back(i);
    }
    Batch b = make_batch(docs, indices, cfg.max_seq_len);
    if (b.n_active == 0) continue;
    MatF logits = model::forward(cfg, params, b.inputs, b.batch, b.seq_len, /*train=*/false);
    float mean = masked_cross_entropy<float>(logits, b.targets, 0);
    total += static_cast<double>(mean) * static_cast<double>(b.n_active);
    count += b.n_active;
  }
  if (count == 0) throw ValidationError("evaluate: no non-pad targets in dataset");
  return metrics_from_loss(total / static_cast<double>(count), cfg.vocab_size);
}

double train_epoch(const model::ModelConfig& cfg, model::ModelParams<float>& params,
                   std::span<const std::vector<std::int32_t>> docs, AdamWState& state,
                   const TrainConfig& config, int epoch_index) {
  if (docs.empty()) throw ValidationError("train_epoch: empty dataset");
  std::vector<std::size_t> order(docs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(mix_seed(mix_seed(config.seed, 0x65706f63), static_cast<std::uint64_t>(epoch_index)));
  shuffle_rng.shuffle(order);

  model::ModelParams<float> grads = model::make_params<float>(cfg);
  double loss_sum = 0;
  std::size_t n_batches = 0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
    std::span<const std::size_t> indices(order.data() + start,
                                         std::min<std::size_t>(config.batch_size, order.size() - start));
    Batch b = make_batch(docs, indices, cfg.max_seq_len);
    if (b.n_active == 0) continue;
    std::uint64_t dropout_seed =
        mix_seed(mix_seed(config.seed, 0x62746368), static_cast<std::uint64_t>(epoch_index) * 1000003 + n_batches);
    model::ForwardCache<float> cache;
    MatF logits = model::forward(cfg, params, b.inputs, b.batch, b.seq_len, /*train=*/true, dropout_seed, &cache);
    MatF dlogits;
    float loss = masked_cross_entropy<float>(logits, b.targets, 0, &dlogits);
    model::for_each_param(grads, [](const std::string&, auto& g) { g.setZero(); });
    model::backward(cfg, params, cache, dlogits, grads);
    adamw_step(params, grads, state, config);
    loss_sum += static_cast<double>(loss);
    n_batches++;
  }
  if (n_batches == 0) throw ValidationError("train_epoch: no trainable batches");
  return loss_sum / static_cast<double>(n_batches);
}

nlohmann::ordered_json TrainReport::to_json() const {
  nlohmann::ordered_json j;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : epochs) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"train_ppl", e.train_ppl},
                           {"val_loss", e.val_loss},
                           {"val_ppl", e.val_ppl},
                           {"is_best", e.is_best}});
  }
  j["best_epoch"] = best_epoch;
  return j;
}

TrainReport fit(const std::vector<std::vector<std::int32_t>>& corpus, const model::ModelConfig& model_cfg,
                const TrainConfig& train_cfg, const std::filesystem::path& checkpoint_path,
                const std::optional<std::filesystem::path>& report_path) {
  model_cfg.validate();
  train_cfg.validate();
  auto split = split_corpus(corpus, train_cfg.split, train_cfg.seed);

  auto params = model::init_model<float>(model_cfg, train_cfg.seed);
  AdamWState state = AdamWState::init(model_cfg);
  BestCheckpointTracker tracker;
  TrainReport report;
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    double train_loss = train_epoch(model_cfg, params, split.train, state, train_cfg, epoch);
    EvalMetrics val = evaluate(model_cfg, params, split.val, train_cfg.batch_size);
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = train_loss;
    m.train_ppl = std::exp(train_loss);
    m.val_loss = val.loss;
    m.val_ppl = val.ppl;
    m.is_best = tracker.observe(epoch, val.loss);
    if (m.is_best) {
      model::save_checkpoint(checkpoint_path, model_cfg, params);
    }
    report.epochs.push_back(m);
  }
  report.best_epoch = tracker.best_epoch();
  if (report_path) {
    std::ofstream out(*report_path, std::ios::binary);
    if (!out) throw IoError("cannot write train report: " + report_path->string());
    out << report.to_json().dump(2) << "\n";
  }
  return report;
}

}  // namespace prism::train
