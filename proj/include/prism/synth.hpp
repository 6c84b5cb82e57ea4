#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/events.hpp"
#include "prism/timeline.hpp"

namespace prism::synth {

// One candidate event emitted by a grammar state. Every field is fixed; the
// randomness is in the choice among a state's templates.
struct EventTemplate {
  double prob = 0;
  EventClass event_class = EventClass::Demographic;
  std::string name;
  std::optional<std::string> value;
  std::optional<std::string> unit;
  std::optional<std::string> flag;
  std::optional<std::string> detail;
};

struct Transition {
  double prob = 0;
  std::string to;
};

struct GrammarState {
  std::string name;
  // false: the next event shares this event's timestamp (batched entry).
  bool advance_time = true;
  std::vector<EventTemplate> emissions;
  std::vector<Transition> transitions;  // empty marks a terminal state

  bool terminal() const { return transitions.empty(); }
};

// The state whose outgoing row is replaced by
// {cardiac_next: cardiac_fraction, benign_next: 1 - cardiac_fraction}.
struct CardiacBranch {
  std::string state;
  std::string cardiac_next;
  std::string benign_next;
};

// Seeded probabilistic grammar over clinical event templates. Documents start
// in a demographic state and end in a discharge state; the exact next-token
// distribution is computable by the forward algorithm (TokenOracle below).
struct GrammarConfig {
  std::uint64_t seed = 1;
  std::uint64_t n_patients = 0;
  double cardiac_fraction = 0.5;
  std::string start_state;
  std::optional<CardiacBranch> cardiac_branch;
  std::vector<GrammarState> states;

  void validate() const;
  // Transition row with the cardiac branch substituted where configured.
  std::vector<Transition> effective_transitions(const GrammarState& state) const;

  nlohmann::ordered_json to_json() const;
  static GrammarConfig from_json(const nlohmann::json& j);
  static GrammarConfig load(const std::filesystem::path& path);
};

// The grammar the CLI uses when no --grammar file is given: chest-pain
// presentation, vitals and lab panels with shared timestamps, a cardiac or
// benign diagnostic conclusion, then discharge.
GrammarConfig default_grammar(std::uint64_t n_patients = 200, std::uint64_t seed = 1,
                              double cardiac_fraction = 0.6);

std::vector<ClinicalEvent> generate_patient(const GrammarConfig& config, std::uint64_t patient_index);

struct CorpusSummary {
  std::size_t n_files = 0;
  std::size_t n_events = 0;
};

// One `patient_<id>.csv` per patient under out_dir.
CorpusSummary generate_corpus(const GrammarConfig& config, const std::filesystem::path& out_dir);

// Exact next-token probabilities for token sequences produced by a grammar,
// via the scaled forward algorithm over grammar states. Tokens are rendered
// with the same templates the tokenizer applies, so oracle probabilities line
// up with tokenized documents whenever batched groups emit in document order.
class TokenOracle {
 public:
  TokenOracle(const GrammarConfig& config, const timeline::ReferenceRanges& ranges);

  // Incremental prefix consumption; the belief state is the distribution over
  // grammar states about to emit next.
  class Walk {
   public:
    // True once every surviving path has passed its terminal emission.
    bool complete() const { return alpha_.empty(); }
    // P(next = token | prefix, document continues); keys with zero mass omitted.
    std::map<std::string, double> next_distribution() const;
    // Consumes one token, returning its conditional probability.
    double advance(const std::string& token);

   private:
    friend class TokenOracle;
    explicit Walk(const TokenOracle* oracle);
    const TokenOracle* oracle_;
    std::vector<double> alpha_;  // indexed by state, empty when complete
  };

  Walk start() const;
  std::map<std::string, double> next_distribution(std::span<const std::string> prefix) const;
  // Mean over every token position of -ln p(token | prefix); nats per token.
  double cross_entropy(std::span<const timeline::TokenDocument> docs) const;

 private:
  friend class Walk;
  std::vector<std::map<std::string, double>> emission_probs_;       // per state: token -> prob
  std::vector<std::vector<std::pair<int, double>>> transitions_;    // per state: (next, prob)
  std::map<std::string, std::vector<std::pair<int, double>>> token_sources_;  // token -> (state, emit prob)
  int start_ = 0;
};

}  // namespace prism::synth
