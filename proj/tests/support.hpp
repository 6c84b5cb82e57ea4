#pragma once

// Shared helpers and independent reference implementations ("oracles") used
// by the unit and acceptance suites. Everything here is deliberately naive:
// brute force loops, restated formulas, second implementations.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "prism/cohort.hpp"
#include "prism/events.hpp"
#include "prism/linalg.hpp"
#include "prism/manifest.hpp"
#include "prism/model.hpp"
#include "prism/rng.hpp"
#include "prism/synth.hpp"
#include "prism/timeline.hpp"

namespace testsupport {

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("prism_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Reverse-mode gradients of the masked CE of a model, checked against central
// finite differences in double precision.
inline prism::GradCheckReport model_grad_check(const prism::model::ModelConfig& cfg,
                                               const std::vector<std::int32_t>& ids,
                                               const std::vector<std::int32_t>& targets, int batch,
                                               int seq_len, double rel_tol = 1e-3,
                                               std::size_t min_samples = 200,
                                               std::uint64_t seed = 9, bool train_mode = false,
                                               std::uint64_t dropout_seed = 0) {
  using namespace prism;
  auto params = model::init_model<double>(cfg, seed);
  auto grads = model::make_params<double>(cfg);

  model::ForwardCache<double> cache;
  MatD logits = model::forward(cfg, params, ids, batch, seq_len, train_mode, dropout_seed, &cache);
  MatD dlogits;
  masked_cross_entropy(logits, targets, 0, &dlogits);
  model::backward(cfg, params, cache, dlogits, grads);

  std::vector<GradCheckBlock> blocks;
  model::for_each_param_pair(params, grads, [&](const std::string& name, auto& p, auto& g) {
    blocks.push_back({name, p.data(), g.data(), static_cast<std::size_t>(p.size())});
  });
  auto value = [&] {
    MatD v = model::forward(cfg, params, ids, batch, seq_len, train_mode, dropout_seed);
    return masked_cross_entropy(v, targets, 0);
  };
  return grad_check(value, blocks, rel_tol, 1e-4, min_samples, seed);
}

// Second tokenizer implementation: insertion sort on an explicit key, written
// independently of timeline::order_events.
inline std::vector<std::string> reference_tokenize(std::vector<prism::ClinicalEvent> events,
                                                   const prism::timeline::ReferenceRanges& ranges) {
  using prism::EventClass;
  struct Row {
    std::string key;
    std::string token;
  };
  auto rank_of = [](EventClass c) {
    switch (c) {
      case EventClass::Admission: return 1;
      case EventClass::Omr: return 2;
      case EventClass::Lab: return 3;
      case EventClass::Microbiology: return 4;
      case EventClass::Diagnosis: return 5;
      case EventClass::Discharge: return 6;
      default: return 0;
    }
  };
  std::vector<Row> rows;
  for (const auto& ev : events) {
    std::string token = prism::timeline::render_token(ev, ranges);
    char key[64];
    if (ev.event_class == EventClass::Demographic) {
      std::snprintf(key, sizeof(key), "0|%s", prism::timeline::normalize_text(ev.name, "UNKNOWN").c_str());
    } else {
      std::snprintf(key, sizeof(key), "1|%020lld|%d", static_cast<long long>(ev.time),
                    rank_of(ev.event_class));
    }
    rows.push_back({std::string(key) + "|" + token, token});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.key < b.key; });
  std::vector<std::string> tokens;
  for (const auto& row : rows) tokens.push_back(row.token);
  return tokens;
}

// Brute-force cohort filter: quadratic two-loop scan, no sorting assumptions.
inline std::set<std::string> reference_cohort(const std::vector<prism::cohort::DiagnosisRecord>& records,
                                              const prism::cohort::CohortSpec& spec) {
  std::set<std::string> subjects;
  for (const auto& r : records) subjects.insert(r.subject_id);
  std::set<std::string> included;
  for (const auto& subject : subjects) {
    std::int64_t earliest = std::numeric_limits<std::int64_t>::max();
    for (const auto& r : records) {
      if (r.subject_id == subject) earliest = std::min(earliest, r.time);
    }
    bool initial_ok = false;
    for (const auto& r : records) {
      if (r.subject_id == subject && r.time == earliest && spec.initial_codes.contains(r.icd9_code)) {
        initial_ok = true;
      }
    }
    if (!initial_ok) continue;
    for (const auto& r : records) {
      if (r.subject_id == subject && r.time > earliest && spec.matches_terminal(r.icd9_code)) {
        included.insert(subject);
        break;
      }
    }
  }
  return included;
}

// Exhaustive grammar enumeration: every state path with its probability, cut
// at max_len tokens. Used to cross-check the forward-algorithm oracle.
struct EnumeratedSequences {
  // token sequence -> total probability over all state paths, for complete
  // documents (`finished`) and for prefixes still running at the cut.
  std::map<std::vector<std::string>, double> finished;
  std::map<std::vector<std::string>, double> running;
};

inline void enumerate_paths(const prism::synth::GrammarConfig& grammar,
                            const prism::timeline::ReferenceRanges& ranges, int state,
                            std::vector<std::string>& prefix, double prob, std::size_t max_len,
                            EnumeratedSequences& out,
                            const std::map<std::string, int>& state_index) {
  if (prefix.size() == max_len) {
    out.running[prefix] += prob;
    return;
  }
  const auto& st = grammar.states[static_cast<std::size_t>(state)];
  for (const auto& tpl : st.emissions) {
    if (tpl.prob <= 0) continue;
    prism::ClinicalEvent ev;
    ev.subject_id = "ref";
    ev.event_class = tpl.event_class;
    ev.name = tpl.name;
    ev.value = tpl.value;
    ev.unit = tpl.unit;
    ev.flag = tpl.flag;
    ev.detail = tpl.detail;
    std::string token = prism::timeline::render_token(ev, ranges);
    prefix.push_back(token);
    double p_here = prob * tpl.prob;
    if (st.terminal()) {
      out.finished[prefix] += p_here;
    } else {
      for (const auto& tr : grammar.effective_transitions(st)) {
        if (tr.prob <= 0) continue;
        enumerate_paths(grammar, ranges, state_index.at(tr.to), prefix, p_here * tr.prob, max_len, out,
                        state_index);
      }
    }
    prefix.pop_back();
  }
}

inline EnumeratedSequences enumerate_grammar(const prism::synth::GrammarConfig& grammar,
                                             const prism::timeline::ReferenceRanges& ranges,
                                             std::size_t max_len) {
  std::map<std::string, int> state_index;
  for (std::size_t i = 0; i < grammar.states.size(); ++i) {
    state_index[grammar.states[i].name] = static_cast<int>(i);
  }
  EnumeratedSequences out;
  std::vector<std::string> prefix;
  enumerate_paths(grammar, ranges, state_index.at(grammar.start_state), prefix, 1.0, max_len, out,
                  state_index);
  return out;
}

// P(next = token | prefix, document continues) from the enumeration tables.
inline std::map<std::string, double> enumerated_next_distribution(
    const EnumeratedSequences& seqs, const std::vector<std::string>& prefix) {
  std::map<std::string, double> dist;
  double continue_mass = 0;
  auto scan = [&](const std::map<std::vector<std::string>, double>& table) {
    for (const auto& [seq, p] : table) {
      if (seq.size() <= prefix.size()) continue;
      if (!std::equal(prefix.begin(), prefix.end(), seq.begin())) continue;
      dist[seq[prefix.size()]] += p;
      continue_mass += p;
    }
  };
  scan(seqs.finished);
  scan(seqs.running);
  for (auto& [token, p] : dist) p /= continue_mass;
  return dist;
}

}  // namespace testsupport
