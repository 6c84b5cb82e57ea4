#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "prism/cohort.hpp"
#include "prism/errors.hpp"
#include "prism/generate.hpp"
#include "prism/manifest.hpp"
#include "prism/model.hpp"
#include "prism/synth.hpp"
#include "prism/timeline.hpp"
#include "prism/train.hpp"
#include "prism/vocab.hpp"

namespace fs = std::filesystem;
using prism::manifest::RunManifest;

namespace {

struct SynthArgs {
  std::string grammar_path, out_dir, dump_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> n_patients;
  std::optional<double> cardiac_fraction;
};

int run_synth(const SynthArgs& args) {
  prism::synth::GrammarConfig grammar = args.grammar_path.empty()
                                            ? prism::synth::default_grammar()
                                            : prism::synth::GrammarConfig::load(args.grammar_path);
  if (args.seed) grammar.seed = *args.seed;
  if (args.n_patients) grammar.n_patients = *args.n_patients;
  if (args.cardiac_fraction) grammar.cardiac_fraction = *args.cardiac_fraction;
  grammar.validate();

  if (!args.dump_path.empty()) {
    std::ofstream out(args.dump_path, std::ios::binary);
    if (!out) throw prism::IoError("cannot write grammar: " + args.dump_path);
    out << grammar.to_json().dump(2) << "\n";
    std::cout << "wrote grammar to " << args.dump_path << "\n";
    return 0;
  }

  auto summary = prism::synth::generate_corpus(grammar, args.out_dir);
  std::cout << "synth: " << summary.n_files << " files, " << summary.n_events << " events -> "
            << args.out_dir << "\n";

  RunManifest manifest("synth", grammar.seed);
  manifest.set_config({{"grammar", args.grammar_path.empty() ? "<builtin>" : args.grammar_path},
                       {"n_patients", grammar.n_patients},
                       {"cardiac_fraction", grammar.cardiac_fraction},
                       {"n_files", summary.n_files},
                       {"n_events", summary.n_events}});
  if (!args.grammar_path.empty()) manifest.add_input("grammar", args.grammar_path);
  manifest.add_output("corpus", args.out_dir);
  manifest.write(fs::path(args.out_dir) / "manifest.json");
  return 0;
}

struct CohortArgs {
  std::string in_path, spec_path, out_path;
  std::uint64_t seed = 1;
};

int run_cohort(const CohortArgs& args) {
  prism::cohort::CohortSpec spec = args.spec_path.empty() ? prism::cohort::CohortSpec::defaults()
                                                          : prism::cohort::CohortSpec::load(args.spec_path);
  spec.validate();
  auto loaded = prism::cohort::load_diagnosis_records(args.in_path);
  auto initial = prism::cohort::filter_initial_chest_pain(loaded.records, spec);
  auto result = prism::cohort::filter_terminal_cardiac(loaded.records, initial, spec);
  std::string report = prism::cohort::cohort_report(result);
  if (loaded.malformed_rows > 0) {
    report += "malformed rows skipped: " + std::to_string(loaded.malformed_rows) + "\n";
  }

  std::ofstream out(args.out_path, std::ios::binary);
  if (!out) throw prism::IoError("cannot write report: " + args.out_path);
  out << report;
  out.close();
  std::cout << report;

  RunManifest manifest("cohort", args.seed);
  manifest.set_config({{"spec", args.spec_path.empty() ? "<builtin>" : args.spec_path},
                       {"n_initial", result.n_initial},
                       {"n_terminal", result.n_terminal},
                       {"malformed_rows", loaded.malformed_rows}});
  manifest.add_input("events", args.in_path);
  if (!args.spec_path.empty()) manifest.add_input("spec", args.spec_path);
  manifest.add_output("report", args.out_path);
  manifest.write(fs::path(args.out_path).string() + ".manifest.json");
  return 0;
}

struct TokenizeArgs {
  std::string in_dir, out_dir, ranges_path;
  std::uint64_t seed = 1;
};

int run_tokenize(const TokenizeArgs& args) {
  prism::timeline::ReferenceRanges ranges;
  if (!args.ranges_path.empty()) ranges = prism::timeline::ReferenceRanges::load(args.ranges_path);
  auto summary = prism::timeline::tokenize_corpus(args.in_dir, args.out_dir, ranges);
  std::cout << "tokenize: " << summary.n_docs << " documents, " << summary.n_tokens << " tokens -> "
            << args.out_dir << "\n";
  for (const auto& failure : summary.failures) std::cerr << "skipped " << failure << "\n";

  RunManifest manifest("tokenize", args.seed);
  manifest.set_config({{"ranges", args.ranges_path.empty() ? "<none>" : args.ranges_path},
                       {"n_docs", summary.n_docs},
                       {"n_tokens", summary.n_tokens},
                       {"n_failures", summary.failures.size()}});
  manifest.add_input("events", args.in_dir);
  if (!args.ranges_path.empty()) manifest.add_input("ranges", args.ranges_path);
  manifest.add_output("tokens", args.out_dir);
  manifest.write(fs::path(args.out_dir) / "manifest.json");
  return 0;
}

struct VocabArgs {
  std::string in_dir, out_path;
  std::size_t max_size = 10000;
  std::uint64_t seed = 1;
};

int run_vocab(const VocabArgs& args) {
  auto docs = prism::timeline::read_token_dir(args.in_dir);
  auto counts = prism::vocab::count_frequencies(docs);
  auto vocabulary = prism::vocab::Vocabulary::build(counts, args.max_size);
  vocabulary.save(args.out_path);
  std::cout << "vocab: " << vocabulary.size() << " tokens (" << counts.size()
            << " distinct in corpus) -> " << args.out_path << "\n";

  RunManifest manifest("vocab", args.seed);
  manifest.set_config({{"max_size", args.max_size},
                       {"vocab_size", vocabulary.size()},
                       {"distinct_tokens", counts.size()}});
  manifest.add_input("tokens", args.in_dir);
  manifest.add_output("vocab", args.out_path);
  manifest.write(args.out_path + ".manifest.json");
  return 0;
}

std::vector<std::vector<std::int32_t>> encode_token_dir(const std::string& dir,
                                                        const prism::vocab::Vocabulary& vocabulary) {
  auto docs = prism::timeline::read_token_dir(dir);
  std::vector<std::vector<std::int32_t>> encoded;
  encoded.reserve(docs.size());
  for (const auto& doc : docs) encoded.push_back(vocabulary.encode(doc.tokens));
  return encoded;
}

struct TrainArgs {
  std::string tokens_dir, vocab_path, model_config_path, train_config_path, ckpt_path, report_path;
  std::optional<std::uint64_t> seed;
};

prism::model::ModelConfig load_model_config(const std::string& path) {
  if (path.empty()) return {};
  std::ifstream in(path);
  if (!in) throw prism::IngestError("cannot open model config: " + path);
  nlohmann::json j;
  in >> j;
  return prism::model::ModelConfig::from_json(j);
}

int run_train(const TrainArgs& args) {
  auto vocabulary = prism::vocab::Vocabulary::load(args.vocab_path);
  prism::model::ModelConfig model_cfg = load_model_config(args.model_config_path);
  prism::train::TrainConfig train_cfg = args.train_config_path.empty()
                                            ? prism::train::TrainConfig{}
                                            : prism::train::TrainConfig::load(args.train_config_path);
  if (args.seed) train_cfg.seed = *args.seed;
  if (static_cast<std::size_t>(model_cfg.vocab_size) < vocabulary.size()) {
    throw prism::ConfigError("model vocab_size " + std::to_string(model_cfg.vocab_size) +
                             " smaller than vocabulary (" + std::to_string(vocabulary.size()) + ")");
  }

  auto corpus = encode_token_dir(args.tokens_dir, vocabulary);
  std::string report_path = args.report_path.empty()
                                ? (fs::path(args.ckpt_path).parent_path() / "train_report.json").string()
                                : args.report_path;
  auto report = prism::train::fit(corpus, model_cfg, train_cfg, args.ckpt_path, fs::path(report_path));
  for (const auto& e : report.epochs) {
    std::printf("epoch %d | train loss %.4f ppl %.2f | val loss %.4f ppl %.2f%s\n", e.epoch, e.train_loss,
                e.train_ppl, e.val_loss, e.val_ppl, e.is_best ? " | best" : "");
  }
  std::cout << "best epoch: " << report.best_epoch << " -> " << args.ckpt_path << "\n";

  RunManifest manifest("train", train_cfg.seed);
  manifest.set_config({{"model", model_cfg.to_json()},
                       {"train", train_cfg.to_json()},
                       {"n_docs", corpus.size()},
                       {"best_epoch", report.best_epoch}});
  manifest.add_input("tokens", args.tokens_dir);
  manifest.add_input("vocab", args.vocab_path);
  manifest.add_output("checkpoint", args.ckpt_path);
  manifest.add_output("report", report_path);
  manifest.write(args.ckpt_path + ".manifest.json");
  return 0;
}

struct EvalArgs {
  std::string ckpt_path, tokens_dir, vocab_path, out_path;
  std::uint64_t seed = 1;
};

int run_eval(const EvalArgs& args) {
  auto vocabulary = prism::vocab::Vocabulary::load(args.vocab_path);
  auto [model_cfg, params] = prism::model::load_checkpoint(args.ckpt_path);
  auto corpus = encode_token_dir(args.tokens_dir, vocabulary);
  auto metrics = prism::train::evaluate(model_cfg, params, corpus, 8);
  std::printf("loss %.4f nats | ppl %.4f | %.4f bits/token | %.4f bits removed vs uniform\n",
              metrics.loss, metrics.ppl, metrics.bits_per_token, metrics.bits_removed);

  nlohmann::ordered_json j = {{"loss", metrics.loss},
                              {"ppl", metrics.ppl},
                              {"bits_per_token", metrics.bits_per_token},
                              {"bits_removed", metrics.bits_removed},
                              {"n_docs", corpus.size()}};
  std::ofstream out(args.out_path, std::ios::binary);
  if (!out) throw prism::IoError("cannot write eval report: " + args.out_path);
  out << j.dump(2) << "\n";
  out.close();

  RunManifest manifest("eval", args.seed);
  manifest.set_config(j);
  manifest.add_input("checkpoint", args.ckpt_path);
  manifest.add_input("tokens", args.tokens_dir);
  manifest.add_input("vocab", args.vocab_path);
  manifest.add_output("report", args.out_path);
  manifest.write(args.out_path + ".manifest.json");
  return 0;
}

struct GenerateArgs {
  std::string ckpt_path, vocab_path, scenarios_path, out_path;
  std::optional<std::uint64_t> seed;
};

int run_generate(const GenerateArgs& args) {
  auto vocabulary = prism::vocab::Vocabulary::load(args.vocab_path);
  auto [model_cfg, params] = prism::model::load_checkpoint(args.ckpt_path);
  auto report = prism::gen::run_scenarios(args.scenarios_path, model_cfg, params, vocabulary, args.seed);
  std::ofstream out(args.out_path, std::ios::binary);
  if (!out) throw prism::IoError("cannot write generation report: " + args.out_path);
  out << report.dump(2) << "\n";
  out.close();
  std::cout << "generate: " << report["scenarios"].size() << " scenarios, "
            << report["errors"].size() << " malformed lines -> " << args.out_path << "\n";
  for (const auto& err : report["errors"]) {
    std::cerr << "scenario line " << err["line"] << ": " << err["error"].get<std::string>() << "\n";
  }

  RunManifest manifest("generate", args.seed.value_or(1));
  manifest.set_config({{"scenarios", args.scenarios_path}});
  manifest.add_input("checkpoint", args.ckpt_path);
  manifest.add_input("vocab", args.vocab_path);
  manifest.add_input("scenarios", args.scenarios_path);
  manifest.add_output("report", args.out_path);
  manifest.write(args.out_path + ".manifest.json");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PRISM pipeline: synthetic clinical event corpora, deterministic tokenization, "
               "vocabulary pruning, causal transformer training, and next-event generation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "generate a synthetic patient event corpus");
  synth->add_option("--grammar", synth_args.grammar_path, "grammar JSON (builtin default if omitted)");
  synth->add_option("--out", synth_args.out_dir, "output directory for patient CSVs");
  synth->add_option("--dump-grammar", synth_args.dump_path, "write the effective grammar JSON and exit");
  synth->add_option("--seed", synth_args.seed, "seed override");
  synth->add_option("--n-patients", synth_args.n_patients, "patient count override");
  synth->add_option("--cardiac-fraction", synth_args.cardiac_fraction, "cardiac arc probability override");

  CohortArgs cohort_args;
  auto* cohort = app.add_subcommand("cohort", "two-stage chest-pain -> cardiac patient filter");
  cohort->add_option("--in", cohort_args.in_path, "event CSV file or directory")->required();
  cohort->add_option("--spec", cohort_args.spec_path, "cohort spec JSON (builtin default if omitted)");
  cohort->add_option("--out", cohort_args.out_path, "report output path")->required();
  cohort->add_option("--seed", cohort_args.seed, "seed (recorded in the manifest)");

  TokenizeArgs tokenize_args;
  auto* tokenize = app.add_subcommand("tokenize", "convert event CSVs to token documents");
  tokenize->add_option("--in", tokenize_args.in_dir, "event CSV directory")->required();
  tokenize->add_option("--out", tokenize_args.out_dir, "token document directory")->required();
  tokenize->add_option("--ranges", tokenize_args.ranges_path, "reference range JSON for numeric buckets");
  tokenize->add_option("--seed", tokenize_args.seed, "seed (recorded in the manifest)");

  VocabArgs vocab_args;
  auto* vocab = app.add_subcommand("vocab", "build the frequency-pruned vocabulary");
  vocab->add_option("--in", vocab_args.in_dir, "token document directory")->required();
  vocab->add_option("--out", vocab_args.out_path, "vocabulary JSON output")->required();
  vocab->add_option("--max-size", vocab_args.max_size, "maximum vocabulary size incl. specials");
  vocab->add_option("--seed", vocab_args.seed, "seed (recorded in the manifest)");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "train the causal transformer");
  train->add_option("--tokens", train_args.tokens_dir, "token document directory")->required();
  train->add_option("--vocab", train_args.vocab_path, "vocabulary JSON")->required();
  train->add_option("--model-config", train_args.model_config_path, "model config JSON");
  train->add_option("--train-config", train_args.train_config_path, "train config JSON");
  train->add_option("--ckpt", train_args.ckpt_path, "checkpoint output path")->required();
  train->add_option("--report", train_args.report_path, "train report JSON path");
  train->add_option("--seed", train_args.seed, "seed override");

  EvalArgs eval_args;
  auto* eval = app.add_subcommand("eval", "perplexity evaluation of a checkpoint");
  eval->add_option("--ckpt", eval_args.ckpt_path, "checkpoint path")->required();
  eval->add_option("--tokens", eval_args.tokens_dir, "token document directory")->required();
  eval->add_option("--vocab", eval_args.vocab_path, "vocabulary JSON")->required();
  eval->add_option("--out", eval_args.out_path, "eval report JSON path");
  eval->add_option("--seed", eval_args.seed, "seed (recorded in the manifest)");

  GenerateArgs generate_args;
  auto* generate = app.add_subcommand("generate", "autoregressive continuation of scenario prompts");
  generate->add_option("--ckpt", generate_args.ckpt_path, "checkpoint path")->required();
  generate->add_option("--vocab", generate_args.vocab_path, "vocabulary JSON")->required();
  generate->add_option("--scenarios", generate_args.scenarios_path, "JSON-lines scenario file")->required();
  generate->add_option("--out", generate_args.out_path, "generation report JSON path")->required();
  generate->add_option("--seed", generate_args.seed, "seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (synth->parsed()) {
      if (synth_args.out_dir.empty() && synth_args.dump_path.empty()) {
        std::cerr << "error: synth requires --out (or --dump-grammar)\n";
        return 1;
      }
      return run_synth(synth_args);
    }
    if (cohort->parsed()) return run_cohort(cohort_args);
    if (tokenize->parsed()) return run_tokenize(tokenize_args);
    if (vocab->parsed()) return run_vocab(vocab_args);
    if (train->parsed()) return run_train(train_args);
    if (eval->parsed()) {
      if (eval_args.out_path.empty()) eval_args.out_path = "eval_report.json";
      return run_eval(eval_args);
    }
    if (generate->parsed()) return run_generate(generate_args);
  } catch (const prism::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const prism::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const prism::OracleError& e) {
    std::cerr << "oracle error: " << e.what() << "\n";
    return 1;
  } catch (const prism::IngestError& e) {
    std::cerr << "ingest error: " << e.what() << "\n";
    return 2;
  } catch (const prism::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
