#include "prism/generate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace prism::gen {

void GenerationRequest::validate() const {
  if (prompt.empty()) throw ValidationError("generation request needs a non-empty prompt");
  if (max_new_tokens < 1) throw ValidationError("max_new_tokens must be >= 1");
  if (k < 1) throw ValidationError("k must be >= 1");
  if (temperature <= 0) throw ValidationError("temperature must be positive");
}

GenerationRequest GenerationRequest::from_json(const nlohmann::json& j) {
  GenerationRequest r;
  r.name = j.value("name", std::string("scenario"));
  for (const auto& token : j.at("prompt")) r.prompt.push_back(token.get<std::string>());
  r.max_new_tokens = j.value("max_new_tokens", 15);
  std::string strategy = j.value("strategy", std::string("greedy"));
  if (strategy == "greedy") {
    r.strategy = Strategy::Greedy;
  } else if (strategy == "top_k") {
    r.strategy = Strategy::TopK;
  } else {
    throw ValidationError("unknown strategy: " + strategy);
  }
  r.k = j.value("k", 10);
  r.temperature = j.value("temperature", 1.0);
  r.seed = j.value("seed", std::uint64_t{1});
  r.validate();
  return r;
}

NextDistribution next_token_distribution(const model::ModelConfig& cfg,
                                         const model::ModelParams<float>& params,
                                         const vocab::Vocabulary& vocab,
                                         std::span<const std::string> prompt) {
  if (prompt.empty()) throw ValidationError("next_token_distribution: empty prompt");
  std::vector<std::string> tokens(prompt.begin(), prompt.end());
  std::vector<std::int32_t> ids = vocab.encode(tokens);
  NextDistribution out;
  out.prompt_all_unknown =
      std::all_of(ids.begin(), ids.end(), [](std::int32_t id) { return id == vocab::kUnkId; });
  // Sliding window over the tail once the context fills up.
  if (static_cast<int>(ids.size()) >= cfg.max_seq_len) {
    ids.erase(ids.begin(), ids.end() - (cfg.max_seq_len - 1));
  }

  const int t = static_cast<int>(ids.size());
  MatF logits = model::forward(cfg, params, ids, 1, t, /*train=*/false);
  Eigen::RowVectorXd last = logits.row(t - 1).cast<double>();
  double m = last.maxCoeff();
  Eigen::RowVectorXd exps = (last.array() - m).exp();
  exps(vocab::kPadId) = 0.0;  // [PAD] is structural, never sampled
  // Model logits may cover more ids than the vocabulary defines; those ids
  // decode to nothing and get zero mass.
  for (int i = static_cast<int>(vocab.size()); i < cfg.vocab_size; ++i) exps(i) = 0.0;
  double sum = exps.sum();
  if (sum <= 0) throw ValidationError("next_token_distribution: no probability mass on real tokens");
  out.probs.resize(static_cast<std::size_t>(cfg.vocab_size));
  for (int i = 0; i < cfg.vocab_size; ++i) out.probs[static_cast<std::size_t>(i)] = exps(i) / sum;
  return out;
}

std::int32_t sample_next(std::span<const double> probs, Strategy strategy, int k, double temperature,
                         Rng& rng, const vocab::Vocabulary& vocab) {
  std::vector<std::int32_t> order;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0) order.push_back(static_cast<std::int32_t>(i));
  }
  if (order.empty()) throw ValidationError("sample_next: distribution has no support");
  auto better = [&](std::int32_t a, std::int32_t b) {
    double pa = probs[static_cast<std::size_t>(a)], pb = probs[static_cast<std::size_t>(b)];
    if (pa != pb) return pa > pb;
    return vocab.token_of(a) < vocab.token_of(b);
  };
  if (strategy == Strategy::Greedy || k == 1) {
    std::int32_t best = order[0];
    for (std::int32_t candidate : order) {
      if (better(candidate, best)) best = candidate;
    }
    return best;
  }
  std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
  order.resize(keep);
  // Temperature scaling in log space, anchored at the top candidate so small
  // temperatures sharpen toward the argmax instead of underflowing.
  const double log_top = std::log(probs[static_cast<std::size_t>(order[0])]);
  std::vector<double> weights(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    double p = probs[static_cast<std::size_t>(order[i])];
    weights[i] = p > 0 ? std::exp((std::log(p) - log_top) / temperature) : 0.0;
  }
  return order[rng.categorical(weights)];
}

namespace {

std::vector<std::pair<std::string, double>> top5(std::span<const double> probs,
                                                 const vocab::Vocabulary& vocab) {
  std::vector<std::int32_t> order;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > 0) order.push_back(static_cast<std::int32_t>(i));
  }
  std::size_t keep = std::min<std::size_t>(5, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                    [&](std::int32_t a, std::int32_t b) {
                      double pa = probs[static_cast<std::size_t>(a)], pb = probs[static_cast<std::size_t>(b)];
                      if (pa != pb) return pa > pb;
                      return vocab.token_of(a) < vocab.token_of(b);
                    });
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < keep; ++i) {
    out.emplace_back(vocab.token_of(order[i]), probs[static_cast<std::size_t>(order[i])]);
  }
  return out;
}

}  // namespace

GenerationResult generate(const model::ModelConfig& cfg, const model::ModelParams<float>& params,
                          const vocab::Vocabulary& vocab, const GenerationRequest& request) {
  request.validate();
  GenerationResult result;
  result.name = request.name;
  result.prompt = request.prompt;

  Rng rng(mix_seed(request.seed, 0x67656e65));
  std::vector<std::string> context = request.prompt;
  for (int step = 0; step < request.max_new_tokens; ++step) {
    NextDistribution dist = next_token_distribution(cfg, params, vocab, context);
    if (step == 0) result.prompt_all_unknown = dist.prompt_all_unknown;
    std::int32_t id = sample_next(dist.probs, request.strategy, request.k, request.temperature, rng, vocab);
    StepRecord record;
    record.token = vocab.token_of(id);
    record.prob = dist.probs[static_cast<std::size_t>(id)];
    record.top5 = top5(dist.probs, vocab);
    result.steps.push_back(std::move(record));
    result.generated.push_back(vocab.token_of(id));
    if (id == vocab::kUnkId) result.n_unknown_generated++;
    context.push_back(vocab.token_of(id));
  }
  return result;
}

nlohmann::ordered_json run_scenarios(const std::filesystem::path& scenario_path,
                                     const model::ModelConfig& cfg,
                                     const model::ModelParams<float>& params,
                                     const vocab::Vocabulary& vocab,
                                     std::optional<std::uint64_t> seed_override) {
  std::ifstream in(scenario_path, std::ios::binary);
  if (!in) throw IngestError("cannot open scenario file: " + scenario_path.string());

  nlohmann::ordered_json report;
  report["scenarios"] = nlohmann::ordered_json::array();
  report["errors"] = nlohmann::ordered_json::array();

  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    line_number++;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    GenerationRequest request;
    try {
      request = GenerationRequest::from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      report["errors"].push_back({{"line", line_number}, {"error", e.what()}});
      continue;
    }
    if (seed_override) request.seed = *seed_override;
    GenerationResult result = generate(cfg, params, vocab, request);
    nlohmann::ordered_json js;
    js["name"] = result.name;
    js["prompt"] = result.prompt;
    js["generated"] = result.generated;
    js["prompt_all_unknown"] = result.prompt_all_unknown;
    js["n_unknown_generated"] = result.n_unknown_generated;
    js["steps"] = nlohmann::ordered_json::array();
    for (const auto& step : result.steps) {
      nlohmann::ordered_json jstep;
      jstep["token"] = step.token;
      jstep["prob"] = step.prob;
      jstep["top5"] = nlohmann::ordered_json::array();
      for (const auto& [token, prob] : step.top5) {
        jstep["top5"].push_back({{"token", token}, {"prob", prob}});
      }
      js["steps"].push_back(jstep);
    }
    report["scenarios"].push_back(js);
  }
  return report;
}

}  // namespace prism::gen
