#include "prism/synth.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <unordered_map>

#include "prism/errors.hpp"
#include "prism/rng.hpp"

namespace prism::synth {

namespace {

constexpr std::int64_t kBaseEpoch = 1420070400;  // 2015-01-01T00:00:00Z
constexpr std::size_t kMaxWalkLength = 100000;

std::unordered_map<std::string, int> index_states(const std::vector<GrammarState>& states) {
  std::unordered_map<std::string, int> index;
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto [it, inserted] = index.emplace(states[i].name, static_cast<int>(i));
    if (!inserted) throw ConfigError("duplicate grammar state: " + states[i].name);
  }
  return index;
}

ClinicalEvent instantiate(const EventTemplate& tpl, const std::string& subject_id, std::int64_t time) {
  ClinicalEvent ev;
  ev.subject_id = subject_id;
  ev.time = time;
  ev.event_class = tpl.event_class;
  ev.name = tpl.name;
  ev.value = tpl.value;
  ev.unit = tpl.unit;
  ev.flag = tpl.flag;
  ev.detail = tpl.detail;
  return ev;
}

std::string subject_id_for(std::uint64_t patient_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05llu", static_cast<unsigned long long>(patient_index));
  return buf;
}

}  // namespace

std::vector<Transition> GrammarConfig::effective_transitions(const GrammarState& state) const {
  if (cardiac_branch && state.name == cardiac_branch->state) {
    return {{cardiac_fraction, cardiac_branch->cardiac_next},
            {1.0 - cardiac_fraction, cardiac_branch->benign_next}};
  }
  return state.transitions;
}

void GrammarConfig::validate() const {
  if (states.empty()) throw ConfigError("grammar has no states");
  if (cardiac_fraction < 0.0 || cardiac_fraction > 1.0) {
    throw ConfigError("cardiac_fraction must be in [0, 1]");
  }
  auto index = index_states(states);
  if (!index.contains(start_state)) throw ConfigError("start_state not defined: " + start_state);
  if (cardiac_branch) {
    for (const auto& ref : {cardiac_branch->state, cardiac_branch->cardiac_next, cardiac_branch->benign_next}) {
      if (!index.contains(ref)) throw ConfigError("cardiac_branch references unknown state: " + ref);
    }
    if (states[static_cast<std::size_t>(index.at(cardiac_branch->state))].terminal()) {
      throw ConfigError("cardiac_branch state must not be terminal: " + cardiac_branch->state);
    }
  }

  for (const auto& state : states) {
    if (state.emissions.empty()) throw ConfigError("state has no emissions: " + state.name);
    double emission_sum = 0;
    for (const auto& tpl : state.emissions) {
      if (tpl.prob < 0) throw ConfigError("negative emission probability in " + state.name);
      if (tpl.name.empty()) throw ConfigError("emission with empty name in " + state.name);
      emission_sum += tpl.prob;
    }
    if (std::abs(emission_sum - 1.0) > 1e-9) {
      throw ConfigError("emission row of " + state.name + " sums to " + std::to_string(emission_sum));
    }
    auto transitions = effective_transitions(state);
    if (!transitions.empty()) {
      double row_sum = 0;
      for (const auto& tr : transitions) {
        if (tr.prob < 0) throw ConfigError("negative transition probability in " + state.name);
        if (!index.contains(tr.to)) {
          throw ConfigError("transition from " + state.name + " to unknown state " + tr.to);
        }
        row_sum += tr.prob;
      }
      if (std::abs(row_sum - 1.0) > 1e-9) {
        throw ConfigError("transition row of " + state.name + " sums to " + std::to_string(row_sum));
      }
    } else {
      for (const auto& tpl : state.emissions) {
        if (tpl.event_class != EventClass::Discharge) {
          throw ConfigError("terminal state " + state.name + " must emit only DISCHARGE events");
        }
      }
    }
  }
  for (const auto& tpl : states[static_cast<std::size_t>(index.at(start_state))].emissions) {
    if (tpl.event_class != EventClass::Demographic) {
      throw ConfigError("start state must emit only DEMOGRAPHIC events");
    }
  }

  // Termination with probability 1: every state reachable from the start can
  // reach a terminal state through positive-probability edges.
  std::vector<std::vector<int>> successors(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (const auto& tr : effective_transitions(states[i])) {
      if (tr.prob > 0) successors[i].push_back(index.at(tr.to));
    }
  }
  std::vector<bool> reaches_terminal(states.size(), false);
  std::deque<int> queue;
  std::vector<std::vector<int>> predecessors(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    for (int next : successors[i]) predecessors[static_cast<std::size_t>(next)].push_back(static_cast<int>(i));
    if (states[i].terminal()) {
      reaches_terminal[i] = true;
      queue.push_back(static_cast<int>(i));
    }
  }
  while (!queue.empty()) {
    int s = queue.front();
    queue.pop_front();
    for (int prev : predecessors[static_cast<std::size_t>(s)]) {
      if (!reaches_terminal[static_cast<std::size_t>(prev)]) {
        reaches_terminal[static_cast<std::size_t>(prev)] = true;
        queue.push_back(prev);
      }
    }
  }
  std::vector<bool> reachable(states.size(), false);
  queue.push_back(index.at(start_state));
  reachable[static_cast<std::size_t>(index.at(start_state))] = true;
  while (!queue.empty()) {
    int s = queue.front();
    queue.pop_front();
    if (!reaches_terminal[static_cast<std::size_t>(s)]) {
      throw ConfigError("state cannot reach a terminal state: " + states[static_cast<std::size_t>(s)].name);
    }
    for (int next : successors[static_cast<std::size_t>(s)]) {
      if (!reachable[static_cast<std::size_t>(next)]) {
        reachable[static_cast<std::size_t>(next)] = true;
        queue.push_back(next);
      }
    }
  }
}

std::vector<ClinicalEvent> generate_patient(const GrammarConfig& config, std::uint64_t patient_index) {
  config.validate();
  if (config.n_patients > 0 && patient_index >= config.n_patients) {
    throw ConfigError("patient_index " + std::to_string(patient_index) + " out of range");
  }
  auto index = index_states(config.states);
  Rng rng(mix_seed(config.seed, patient_index));
  const std::string subject_id = subject_id_for(patient_index);

  std::int64_t t = kBaseEpoch + static_cast<std::int64_t>(rng.below(365)) * 86400 +
                   static_cast<std::int64_t>(rng.below(1440)) * 60;
  std::vector<ClinicalEvent> events;
  int state_idx = index.at(config.start_state);
  std::vector<double> weights;
  for (std::size_t step = 0; step < kMaxWalkLength; ++step) {
    const GrammarState& state = config.states[static_cast<std::size_t>(state_idx)];
    weights.clear();
    for (const auto& tpl : state.emissions) weights.push_back(tpl.prob);
    const EventTemplate& tpl = state.emissions[rng.categorical(weights)];
    events.push_back(instantiate(tpl, subject_id, t));
    if (state.terminal()) return events;

    auto transitions = config.effective_transitions(state);
    weights.clear();
    for (const auto& tr : transitions) weights.push_back(tr.prob);
    state_idx = index.at(transitions[rng.categorical(weights)].to);
    if (state.advance_time) {
      t += 60 * (1 + static_cast<std::int64_t>(rng.below(240)));  // 1..240 minutes
    }
  }
  throw ConfigError("grammar walk exceeded " + std::to_string(kMaxWalkLength) + " events");
}

CorpusSummary generate_corpus(const GrammarConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IngestError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  CorpusSummary summary;
  for (std::uint64_t i = 0; i < config.n_patients; ++i) {
    auto events = generate_patient(config, i);
    auto path = out_dir / ("patient_" + subject_id_for(i) + ".csv");
    write_event_csv(path, events);
    summary.n_files++;
    summary.n_events += events.size();
  }
  return summary;
}

TokenOracle::TokenOracle(const GrammarConfig& config, const timeline::ReferenceRanges& ranges) {
  config.validate();
  auto index = index_states(config.states);
  start_ = index.at(config.start_state);
  emission_probs_.resize(config.states.size());
  transitions_.resize(config.states.size());
  for (std::size_t i = 0; i < config.states.size(); ++i) {
    for (const auto& tpl : config.states[i].emissions) {
      if (tpl.prob <= 0) continue;
      std::string token = timeline::render_token(instantiate(tpl, "oracle", 0), ranges);
      emission_probs_[i][token] += tpl.prob;
    }
    for (const auto& tr : config.effective_transitions(config.states[i])) {
      if (tr.prob > 0) transitions_[i].emplace_back(index.at(tr.to), tr.prob);
    }
    for (const auto& [token, prob] : emission_probs_[i]) {
      token_sources_[token].emplace_back(static_cast<int>(i), prob);
    }
  }
}

TokenOracle::Walk::Walk(const TokenOracle* oracle) : oracle_(oracle) {
  alpha_.assign(oracle_->emission_probs_.size(), 0.0);
  alpha_[static_cast<std::size_t>(oracle_->start_)] = 1.0;
}

TokenOracle::Walk TokenOracle::start() const { return Walk(this); }

std::map<std::string, double> TokenOracle::Walk::next_distribution() const {
  std::map<std::string, double> dist;
  for (std::size_t s = 0; s < alpha_.size(); ++s) {
    if (alpha_[s] == 0.0) continue;
    for (const auto& [token, prob] : oracle_->emission_probs_[s]) {
      dist[token] += alpha_[s] * prob;
    }
  }
  return dist;
}

double TokenOracle::Walk::advance(const std::string& token) {
  if (!oracle_->token_sources_.contains(token)) {
    throw OracleError("token not in grammar alphabet: " + token);
  }
  if (complete()) throw OracleError("prefix continues past the end of every grammar path");

  double token_mass = 0.0;
  std::vector<double> next(alpha_.size(), 0.0);
  for (const auto& [s, emit_prob] : oracle_->token_sources_.at(token)) {
    double mass = alpha_[static_cast<std::size_t>(s)] * emit_prob;
    if (mass == 0.0) continue;
    token_mass += mass;
    for (const auto& [to, prob] : oracle_->transitions_[static_cast<std::size_t>(s)]) {
      next[static_cast<std::size_t>(to)] += mass * prob;
    }
  }
  if (token_mass <= 0.0) throw OracleError("prefix not realizable at token: " + token);

  double continue_mass = 0.0;
  for (double v : next) continue_mass += v;
  if (continue_mass <= 0.0) {
    alpha_.clear();  // every surviving path just emitted its terminal token
  } else {
    for (double& v : next) v /= continue_mass;
    alpha_ = std::move(next);
  }
  return token_mass;
}

std::map<std::string, double> TokenOracle::next_distribution(std::span<const std::string> prefix) const {
  Walk walk = start();
  for (const auto& token : prefix) walk.advance(token);
  if (walk.complete()) {
    throw OracleError("prefix reaches the end of every grammar path; no next token exists");
  }
  return walk.next_distribution();
}

double TokenOracle::cross_entropy(std::span<const timeline::TokenDocument> docs) const {
  double total = 0.0;
  std::size_t positions = 0;
  for (const auto& doc : docs) {
    Walk walk = start();
    for (const auto& token : doc.tokens) {
      total -= std::log(walk.advance(token));
      positions++;
    }
  }
  if (positions == 0) throw OracleError("cross_entropy over an empty corpus");
  return total / static_cast<double>(positions);
}

nlohmann::ordered_json GrammarConfig::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["n_patients"] = n_patients;
  j["cardiac_fraction"] = cardiac_fraction;
  j["start_state"] = start_state;
  if (cardiac_branch) {
    j["cardiac_branch"] = {{"state", cardiac_branch->state},
                           {"cardiac_next", cardiac_branch->cardiac_next},
                           {"benign_next", cardiac_branch->benign_next}};
  }
  j["states"] = nlohmann::ordered_json::array();
  for (const auto& state : states) {
    nlohmann::ordered_json js;
    js["name"] = state.name;
    js["advance_time"] = state.advance_time;
    js["emissions"] = nlohmann::ordered_json::array();
    for (const auto& tpl : state.emissions) {
      nlohmann::ordered_json jt;
      jt["prob"] = tpl.prob;
      jt["class"] = std::string(to_string(tpl.event_class));
      jt["name"] = tpl.name;
      if (tpl.value) jt["value"] = *tpl.value;
      if (tpl.unit) jt["unit"] = *tpl.unit;
      if (tpl.flag) jt["flag"] = *tpl.flag;
      if (tpl.detail) jt["detail"] = *tpl.detail;
      js["emissions"].push_back(jt);
    }
    js["transitions"] = nlohmann::ordered_json::array();
    for (const auto& tr : state.transitions) {
      js["transitions"].push_back({{"prob", tr.prob}, {"to", tr.to}});
    }
    j["states"].push_back(js);
  }
  return j;
}

GrammarConfig GrammarConfig::from_json(const nlohmann::json& j) {
  GrammarConfig config;
  config.seed = j.value("seed", std::uint64_t{1});
  config.n_patients = j.value("n_patients", std::uint64_t{0});
  config.cardiac_fraction = j.value("cardiac_fraction", 0.5);
  config.start_state = j.at("start_state").get<std::string>();
  if (j.contains("cardiac_branch")) {
    const auto& jb = j.at("cardiac_branch");
    config.cardiac_branch = CardiacBranch{jb.at("state").get<std::string>(),
                                          jb.at("cardiac_next").get<std::string>(),
                                          jb.at("benign_next").get<std::string>()};
  }
  auto opt_field = [](const nlohmann::json& je, const char* key) -> std::optional<std::string> {
    if (!je.contains(key)) return std::nullopt;
    return je.at(key).get<std::string>();
  };
  for (const auto& js : j.at("states")) {
    GrammarState state;
    state.name = js.at("name").get<std::string>();
    state.advance_time = js.value("advance_time", true);
    for (const auto& je : js.at("emissions")) {
      EventTemplate tpl;
      tpl.prob = je.at("prob").get<double>();
      auto cls = parse_event_class(je.at("class").get<std::string>());
      if (!cls) throw ConfigError("unknown event class in grammar: " + je.at("class").get<std::string>());
      tpl.event_class = *cls;
      tpl.name = je.at("name").get<std::string>();
      tpl.value = opt_field(je, "value");
      tpl.unit = opt_field(je, "unit");
      tpl.flag = opt_field(je, "flag");
      tpl.detail = opt_field(je, "detail");
      state.emissions.push_back(std::move(tpl));
    }
    if (js.contains("transitions")) {
      for (const auto& jt : js.at("transitions")) {
        state.transitions.push_back({jt.at("prob").get<double>(), jt.at("to").get<std::string>()});
      }
    }
    config.states.push_back(std::move(state));
  }
  config.validate();
  return config;
}

GrammarConfig GrammarConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open grammar: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad grammar JSON in " + path.string() + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad grammar schema in " + path.string() + ": " + e.what());
  }
}

GrammarConfig default_grammar(std::uint64_t n_patients, std::uint64_t seed, double cardiac_fraction) {
  GrammarConfig g;
  g.seed = seed;
  g.n_patients = n_patients;
  g.cardiac_fraction = cardiac_fraction;
  g.start_state = "DEMO_AGE";
  g.cardiac_branch = CardiacBranch{"TROPONIN_REPEAT", "CARDIAC_DX", "BENIGN_DX"};

  auto demo = [](double prob, const char* name, const char* value) {
    return EventTemplate{prob, EventClass::Demographic, name, value, std::nullopt, std::nullopt, std::nullopt};
  };
  auto lab = [](double prob, const char* name, const char* flag) {
    return EventTemplate{prob, EventClass::Lab, name, std::nullopt, std::nullopt, flag, std::nullopt};
  };
  auto omr = [](double prob, const char* name, const char* value, const char* unit) {
    return EventTemplate{prob, EventClass::Omr, name, value, unit, std::nullopt, std::nullopt};
  };
  auto dx = [](double prob, const char* code, const char* detail) {
    return EventTemplate{prob, EventClass::Diagnosis, "icd9 diagnosis", code, std::nullopt, std::nullopt, detail};
  };

  g.states = {
      {"DEMO_AGE",
       false,
       {demo(0.2, "age decade", "40S"), demo(0.3, "age decade", "50S"), demo(0.3, "age decade", "60S"),
        demo(0.2, "age decade", "70S")},
       {{1.0, "DEMO_SEX"}}},
      {"DEMO_SEX", true, {demo(0.5, "sex", "M"), demo(0.5, "sex", "F")}, {{1.0, "ADMIT"}}},
      {"ADMIT",
       true,
       {EventTemplate{0.7, EventClass::Admission, "admission", "EMERGENCY", std::nullopt, std::nullopt,
                      std::nullopt},
        EventTemplate{0.2, EventClass::Admission, "admission", "URGENT", std::nullopt, std::nullopt,
                      std::nullopt},
        EventTemplate{0.1, EventClass::Admission, "admission", "ELECTIVE", std::nullopt, std::nullopt,
                      std::nullopt}},
       {{1.0, "DX_CHEST_PAIN"}}},
      {"DX_CHEST_PAIN",
       true,
       {dx(0.55, "786.50", "chest pain unspecified"), dx(0.15, "786.51", "precordial pain"),
        dx(0.05, "786.52", "painful respiration"), dx(0.25, "786.59", "other chest pain")},
       {{1.0, "VITALS_BP"}}},
      {"VITALS_BP",
       false,
       {omr(0.30, "blood pressure systolic", "118", "mmHg"), omr(0.30, "blood pressure systolic", "132", "mmHg"),
        omr(0.25, "blood pressure systolic", "151", "mmHg"), omr(0.15, "blood pressure systolic", "96", "mmHg")},
       {{1.0, "VITALS_HR"}}},
      {"VITALS_HR",
       true,
       {omr(0.40, "heart rate", "72", "bpm"), omr(0.30, "heart rate", "88", "bpm"),
        omr(0.20, "heart rate", "104", "bpm"), omr(0.10, "heart rate", "55", "bpm")},
       {{1.0, "BMP_BUN"}}},
      {"BMP_BUN",
       false,
       {lab(0.70, "bun", "normal"), lab(0.20, "bun", "high"), lab(0.10, "bun", "low")},
       {{1.0, "BMP_CREATININE"}}},
      {"BMP_CREATININE",
       false,
       {lab(0.65, "creatinine", "normal"), lab(0.25, "creatinine", "high"), lab(0.10, "creatinine", "low")},
       {{1.0, "BMP_POTASSIUM"}}},
      {"BMP_POTASSIUM",
       false,
       {lab(0.75, "potassium", "normal"), lab(0.15, "potassium", "high"), lab(0.10, "potassium", "low")},
       {{1.0, "TROPONIN_FIRST"}}},
      {"TROPONIN_FIRST",
       true,
       {lab(0.55, "troponin t", "normal"), lab(0.45, "troponin t", "abnormal")},
       {{0.55, "TROPONIN_REPEAT"}, {0.15, "MICRO_CULTURE"}, {0.30, "VITALS_BP"}}},
      {"MICRO_CULTURE",
       true,
       {EventTemplate{0.8, EventClass::Microbiology, "blood culture", "no growth", std::nullopt, std::nullopt,
                      std::nullopt},
        EventTemplate{0.2, EventClass::Microbiology, "blood culture", std::nullopt, std::nullopt, std::nullopt,
                      std::nullopt}},
       {{1.0, "TROPONIN_REPEAT"}}},
      {"TROPONIN_REPEAT",
       true,
       {lab(0.5, "troponin t", "normal"), lab(0.5, "troponin t", "abnormal")},
       // replaced by the cardiac branch
       {{0.5, "CARDIAC_DX"}, {0.5, "BENIGN_DX"}}},
      {"CARDIAC_DX",
       true,
       {dx(0.30, "410.71", "subendocardial infarction"), dx(0.15, "411.1", "intermediate coronary syndrome"),
        dx(0.25, "414.01", "coronary atherosclerosis"), dx(0.20, "427.31", "atrial fibrillation"),
        dx(0.10, "428.0", "congestive heart failure")},
       {{1.0, "DISCHARGE"}}},
      {"BENIGN_DX",
       true,
       {dx(0.50, "530.81", "esophageal reflux"), dx(0.30, "729.1", "myalgia and myositis"),
        dx(0.20, "300.00", "anxiety state unspecified")},
       {{1.0, "DISCHARGE"}}},
      {"DISCHARGE",
       true,
       {EventTemplate{0.70, EventClass::Discharge, "disposition", "HOME", std::nullopt, std::nullopt, std::nullopt},
        EventTemplate{0.15, EventClass::Discharge, "disposition", "HOME HEALTH CARE", std::nullopt, std::nullopt,
                      std::nullopt},
        EventTemplate{0.10, EventClass::Discharge, "disposition", "SNF", std::nullopt, std::nullopt, std::nullopt},
        EventTemplate{0.05, EventClass::Discharge, "disposition", "AMA", std::nullopt, std::nullopt, std::nullopt}},
       {}},
  };
  return g;
}

}  // namespace prism::synth
