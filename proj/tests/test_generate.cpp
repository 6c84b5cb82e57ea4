#include <doctest.h>

#include <fstream>

#include "prism/generate.hpp"
#include "prism/synth.hpp"
#include "prism/timeline.hpp"
#include "support.hpp"

using namespace prism;
using namespace prism::gen;

namespace {

struct Fixture {
  model::ModelConfig cfg;
  model::ModelParams<float> params;
  vocab::Vocabulary vocabulary;
  std::vector<std::string> prompt;

  static Fixture make(int max_seq_len = 32) {
    auto grammar = synth::default_grammar(24, 3, 0.5);
    timeline::ReferenceRanges ranges;
    std::vector<timeline::TokenDocument> docs;
    for (std::uint64_t i = 0; i < 24; ++i) {
      docs.push_back(timeline::tokenize_patient(synth::generate_patient(grammar, i), ranges));
    }
    model::ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.max_seq_len = max_seq_len;
    cfg.embed_dim = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.dropout_p = 0.0f;
    Fixture f{cfg, model::init_model<float>(cfg, 77),
              vocab::Vocabulary::build(vocab::count_frequencies(docs), 64),
              {docs[0].tokens.begin(), docs[0].tokens.begin() + 4}};
    return f;
  }
};

}  // namespace

TEST_CASE("next token distribution is a pad-free probability vector") {
  auto f = Fixture::make();
  auto dist = next_token_distribution(f.cfg, f.params, f.vocabulary, f.prompt);
  CHECK(dist.probs.size() == static_cast<std::size_t>(f.cfg.vocab_size));
  CHECK(dist.probs[0] == 0.0);  // [PAD]
  double total = 0;
  for (double p : dist.probs) {
    CHECK(p >= 0.0);
    total += p;
  }
  CHECK(std::abs(total - 1.0) < 1e-6);
  CHECK_FALSE(dist.prompt_all_unknown);
}

TEST_CASE("an all-unknown prompt is flagged, not rejected") {
  auto f = Fixture::make();
  std::vector<std::string> junk = {"NOT_IN_VOCAB_1", "NOT_IN_VOCAB_2"};
  auto dist = next_token_distribution(f.cfg, f.params, f.vocabulary, junk);
  CHECK(dist.prompt_all_unknown);
}

TEST_CASE("the argmax of a fixed checkpoint is stable across calls") {
  auto f = Fixture::make();
  Rng rng(1);
  auto a = next_token_distribution(f.cfg, f.params, f.vocabulary, f.prompt);
  auto first = sample_next(a.probs, Strategy::Greedy, 1, 1.0, rng, f.vocabulary);
  for (int trial = 0; trial < 5; ++trial) {
    auto b = next_token_distribution(f.cfg, f.params, f.vocabulary, f.prompt);
    CHECK(sample_next(b.probs, Strategy::Greedy, 1, 1.0, rng, f.vocabulary) == first);
  }
}

TEST_CASE("greedy breaks probability ties lexicographically") {
  auto v = vocab::Vocabulary::build({{"ZULU", 5}, {"ALPHA", 3}}, 4);
  // ids: [PAD]=0 [UNK]=1 ZULU=2 ALPHA=3
  std::vector<double> probs = {0.0, 0.0, 0.5, 0.5};
  Rng rng(2);
  auto id = sample_next(probs, Strategy::Greedy, 1, 1.0, rng, v);
  CHECK(v.token_of(id) == "ALPHA");
}

TEST_CASE("top-k with k=1 is exactly greedy") {
  auto f = Fixture::make();
  auto dist = next_token_distribution(f.cfg, f.params, f.vocabulary, f.prompt);
  Rng rng_a(9), rng_b(10);
  auto greedy = sample_next(dist.probs, Strategy::Greedy, 10, 1.0, rng_a, f.vocabulary);
  for (int trial = 0; trial < 20; ++trial) {
    CHECK(sample_next(dist.probs, Strategy::TopK, 1, 1.0, rng_b, f.vocabulary) == greedy);
  }
}

TEST_CASE("tiny temperatures drive top-k to the argmax") {
  auto v = vocab::Vocabulary::build({{"A", 5}, {"B", 3}, {"C", 1}}, 5);
  std::vector<double> probs = {0.0, 0.0, 0.5, 0.3, 0.2};
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto id = sample_next(probs, Strategy::TopK, 3, 1e-4, rng, v);
    CHECK(v.token_of(id) == "A");
  }
}

TEST_CASE("top-k renormalizes over the k most probable tokens") {
  auto v = vocab::Vocabulary::build({{"A", 5}, {"B", 3}, {"C", 1}}, 5);
  // ids: [PAD] [UNK] A=2 B=3 C=4
  std::vector<double> probs = {0.0, 0.0, 0.5, 0.3, 0.2};
  Rng rng(4);
  int a_count = 0;
  const int n = 10000;
  for (int trial = 0; trial < n; ++trial) {
    auto id = sample_next(probs, Strategy::TopK, 2, 1.0, rng, v);
    CHECK(id != 4);  // C is outside the top 2, never sampled
    if (id == 2) a_count++;
  }
  double a_rate = static_cast<double>(a_count) / n;
  CHECK(a_rate > 0.625 - 0.02);
  CHECK(a_rate < 0.625 + 0.02);
}

TEST_CASE("generation runs to max_new_tokens, never emits [PAD], and repeats under greedy") {
  auto f = Fixture::make();
  GenerationRequest request;
  request.name = "probe";
  request.prompt = f.prompt;
  request.max_new_tokens = 15;
  request.strategy = Strategy::Greedy;
  auto a = generate(f.cfg, f.params, f.vocabulary, request);
  CHECK(a.generated.size() == 15);
  for (const auto& token : a.generated) CHECK(token != "[PAD]");
  auto b = generate(f.cfg, f.params, f.vocabulary, request);
  CHECK(a.generated == b.generated);

  request.strategy = Strategy::TopK;
  request.k = 5;
  request.seed = 12;
  auto c = generate(f.cfg, f.params, f.vocabulary, request);
  auto d = generate(f.cfg, f.params, f.vocabulary, request);
  CHECK(c.generated == d.generated);
  for (const auto& token : c.generated) CHECK(token != "[PAD]");
  CHECK(c.steps.size() == 15);
  CHECK(c.steps[0].top5.size() == 5);
}

TEST_CASE("generation depends only on the final window of long prompts") {
  auto f = Fixture::make(8);  // max_seq_len 8 -> window of 7
  std::vector<std::string> tail;
  for (int i = 0; i < 7; ++i) tail.push_back(f.vocabulary.token_of(2 + i % 6));

  std::vector<std::string> prompt_a = {"DX_786.50", "ADMIT_EMERGENCY", "DX_786.50"};
  prompt_a.insert(prompt_a.end(), tail.begin(), tail.end());
  std::vector<std::string> prompt_b = {"DISCHARGE_HOME"};
  prompt_b.insert(prompt_b.end(), tail.begin(), tail.end());

  GenerationRequest ra;
  ra.prompt = prompt_a;
  ra.max_new_tokens = 6;
  GenerationRequest rb = ra;
  rb.prompt = prompt_b;
  auto a = generate(f.cfg, f.params, f.vocabulary, ra);
  auto b = generate(f.cfg, f.params, f.vocabulary, rb);
  CHECK(a.generated == b.generated);
}

TEST_CASE("scenario files run per line with malformed lines reported") {
  auto f = Fixture::make();
  auto dir = testsupport::fresh_dir("gen_scenarios");
  auto path = dir / "scenarios.jsonl";
  {
    std::ofstream out(path);
    out << R"({"name":"diagnosis","prompt":["DEMO_SEX_M","ADMIT_EMERGENCY"],"max_new_tokens":5})" << "\n";
    out << "this is not json\n";
    out << R"({"name":"labs","prompt":["DX_786.50"],"max_new_tokens":4,"strategy":"top_k","k":3,"seed":5})"
        << "\n";
    out << R"({"name":"workup","prompt":["ADMIT_EMERGENCY"],"max_new_tokens":3})" << "\n";
  }
  auto report = run_scenarios(path, f.cfg, f.params, f.vocabulary);
  CHECK(report["scenarios"].size() == 3);
  REQUIRE(report["errors"].size() == 1);
  CHECK(report["errors"][0]["line"] == 2);

  auto rerun = run_scenarios(path, f.cfg, f.params, f.vocabulary);
  CHECK(report.dump() == rerun.dump());

  CHECK(report["scenarios"][0]["generated"].size() == 5);
  CHECK(report["scenarios"][0]["steps"][0]["top5"].size() == 5);
}

TEST_CASE("an empty scenario file produces an empty report") {
  auto f = Fixture::make();
  auto dir = testsupport::fresh_dir("gen_empty");
  auto path = dir / "empty.jsonl";
  std::ofstream(path).close();
  auto report = run_scenarios(path, f.cfg, f.params, f.vocabulary);
  CHECK(report["scenarios"].empty());
  CHECK(report["errors"].empty());
}

TEST_CASE("the shipped scenario file parses into three greedy requests") {
  std::ifstream in(std::filesystem::path(PRISM_CONFIG_DIR) / "scenarios.jsonl");
  REQUIRE(in.good());
  std::string line;
  int parsed = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto request = GenerationRequest::from_json(nlohmann::json::parse(line));
    CHECK(request.max_new_tokens == 15);
    CHECK(request.strategy == Strategy::Greedy);
    CHECK_FALSE(request.prompt.empty());
    parsed++;
  }
  CHECK(parsed == 3);
}

TEST_CASE("generation requests validate their bounds") {
  GenerationRequest r;
  r.prompt = {"X"};
  r.max_new_tokens = 0;
  CHECK_THROWS_AS(r.validate(), ValidationError);
  r.max_new_tokens = 5;
  r.temperature = 0.0;
  CHECK_THROWS_AS(r.validate(), ValidationError);
  r.temperature = 1.0;
  r.k = 0;
  CHECK_THROWS_AS(r.validate(), ValidationError);
  CHECK_THROWS_AS(GenerationRequest::from_json(nlohmann::json::parse(
                      R"({"prompt":["A"],"strategy":"beam"})")),
                  ValidationError);
}
