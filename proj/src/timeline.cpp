#include "prism/timeline.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prism/errors.hpp"

namespace prism::timeline {

namespace {

bool is_token_char(char c) {
  return (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
}

std::optional<double> parse_number(const std::string& s) {
  double v = 0;
  const char* begin = s.data();
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc{} || ptr != end) return std::nullopt;
  return v;
}

const std::vector<std::string> kLabFlags = {"NORMAL", "ABNORMAL", "HIGH", "LOW"};

}  // namespace

std::string normalize_text(const std::optional<std::string>& raw, std::string_view placeholder) {
  if (!raw) return std::string(placeholder);
  std::string out;
  out.reserve(raw->size());
  bool pending_sep = false;
  for (char ch : *raw) {
    char c = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    if (!is_token_char(c)) {
      if (!out.empty()) pending_sep = true;
      continue;
    }
    if (pending_sep) {
      out.push_back('_');
      pending_sep = false;
    }
    out.push_back(c);
  }
  if (out.empty()) return std::string(placeholder);
  return out;
}

ReferenceRanges ReferenceRanges::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open reference ranges: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad reference range file " + path.string() + ": " + e.what());
  }
  ReferenceRanges ranges;
  for (const auto& [name, entry] : j.items()) {
    double low = entry.at("low").get<double>();
    double high = entry.at("high").get<double>();
    if (low > high) throw ValidationError("reference range low > high for " + name);
    ranges.set(normalize_text(name, "UNKNOWN"), low, high);
  }
  return ranges;
}

void ReferenceRanges::set(const std::string& name, double low, double high) {
  ranges_[name] = {low, high};
}

std::optional<std::string> ReferenceRanges::bucket(const std::string& normalized_name,
                                                   const std::optional<std::string>& value) const {
  if (!value) return std::nullopt;
  auto it = ranges_.find(normalized_name);
  if (it == ranges_.end()) return std::nullopt;
  auto num = parse_number(*value);
  if (!num) return std::nullopt;
  if (*num < it->second.first) return "LOW";
  if (*num > it->second.second) return "HIGH";
  return "NORMAL";
}

std::string render_token(const ClinicalEvent& event, const ReferenceRanges& ranges) {
  const std::string name = normalize_text(event.name, "UNKNOWN");
  switch (event.event_class) {
    case EventClass::Demographic:
      return "DEMO_" + name + "_" + normalize_text(event.value, "UNKNOWN");
    case EventClass::Admission:
      return "ADMIT_" + normalize_text(event.value, "UNKNOWN");
    case EventClass::Discharge:
      return "DISCHARGE_" + normalize_text(event.value, "UNKNOWN");
    case EventClass::Omr: {
      auto bucket = ranges.bucket(name, event.value);
      return "OMR_" + name + "_" + (bucket ? *bucket : "UNKNOWN");
    }
    case EventClass::Lab: {
      if (event.flag) {
        std::string flag = normalize_text(event.flag, "UNKNOWN");
        if (std::find(kLabFlags.begin(), kLabFlags.end(), flag) != kLabFlags.end()) {
          return "LAB_" + name + "_" + flag;
        }
      }
      auto bucket = ranges.bucket(name, event.value);
      return "LAB_" + name + "_" + (bucket ? *bucket : "UNKNOWN");
    }
    case EventClass::Microbiology:
      return "MICRO_" + name + "_" + normalize_text(event.value, "NO_COMMENTS");
    case EventClass::Diagnosis:
      return "DX_" + normalize_text(event.value, "UNKNOWN");
  }
  throw ValidationError("unknown event class");
}

std::vector<ClinicalEvent> order_events(std::vector<ClinicalEvent> events,
                                        const ReferenceRanges& ranges) {
  for (const auto& ev : events) {
    if (ev.subject_id != events.front().subject_id) {
      throw ValidationError("order_events: mixed subject ids " + events.front().subject_id +
                            " and " + ev.subject_id);
    }
  }
  struct Keyed {
    bool demographic;
    std::string demo_name;
    std::int64_t time;
    int rank;
    std::string token;
    std::size_t source;
  };
  std::vector<Keyed> keyed;
  keyed.reserve(events.size());
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& ev = events[i];
    keyed.push_back({ev.event_class == EventClass::Demographic,
                     normalize_text(ev.name, "UNKNOWN"), ev.time, class_rank(ev.event_class),
                     render_token(ev, ranges), i});
  }
  std::sort(keyed.begin(), keyed.end(), [](const Keyed& a, const Keyed& b) {
    if (a.demographic != b.demographic) return a.demographic;
    if (a.demographic) {
      if (a.demo_name != b.demo_name) return a.demo_name < b.demo_name;
      return a.token < b.token;
    }
    if (a.time != b.time) return a.time < b.time;
    if (a.rank != b.rank) return a.rank < b.rank;
    return a.token < b.token;
  });
  std::vector<ClinicalEvent> out;
  out.reserve(events.size());
  for (const auto& k : keyed) out.push_back(std::move(events[k.source]));
  return out;
}

TokenDocument tokenize_patient(std::vector<ClinicalEvent> events, const ReferenceRanges& ranges) {
  if (events.empty()) throw ValidationError("tokenize_patient: empty event list");
  TokenDocument doc;
  doc.subject_id = events.front().subject_id;
  auto ordered = order_events(std::move(events), ranges);
  doc.tokens.reserve(ordered.size());
  for (const auto& ev : ordered) doc.tokens.push_back(render_token(ev, ranges));
  return doc;
}

std::string to_line(const TokenDocument& doc) {
  std::string line;
  for (std::size_t i = 0; i < doc.tokens.size(); ++i) {
    if (i) line.push_back(' ');
    line += doc.tokens[i];
  }
  line.push_back('\n');
  return line;
}

CorpusSummary tokenize_corpus(const std::filesystem::path& in_dir,
                              const std::filesystem::path& out_dir, const ReferenceRanges& ranges) {
  namespace fs = std::filesystem;
  if (!fs::exists(in_dir)) throw IngestError("input directory missing: " + in_dir.string());
  fs::create_directories(out_dir);

  std::vector<fs::path> inputs;
  for (const auto& entry : fs::recursive_directory_iterator(in_dir)) {
    if (!entry.is_regular_file()) continue;
    const auto& p = entry.path();
    if (p.extension() == ".csv" && p.filename().string().starts_with("patient_")) {
      inputs.push_back(p);
    }
  }
  std::sort(inputs.begin(), inputs.end());

  CorpusSummary summary;
  for (const auto& input : inputs) {
    try {
      auto read = read_event_csv(input);
      if (read.malformed_rows > 0) {
        throw IngestError(std::to_string(read.malformed_rows) + " malformed rows");
      }
      if (read.events.empty()) throw IngestError("no events");
      TokenDocument doc = tokenize_patient(std::move(read.events), ranges);
      fs::path out_path = out_dir / input.stem();
      out_path += ".txt";
      std::ofstream out(out_path, std::ios::binary);
      if (!out) throw IngestError("cannot write " + out_path.string());
      out << to_line(doc);
      summary.n_docs++;
      summary.n_tokens += doc.tokens.size();
    } catch (const std::exception& e) {
      summary.failures.push_back(input.filename().string() + ": " + e.what());
    }
  }
  return summary;
}

TokenDocument read_token_document(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open token document: " + path.string());
  std::string line;
  std::getline(in, line);
  TokenDocument doc;
  doc.subject_id = path.stem().string();
  std::istringstream ss(line);
  std::string token;
  while (ss >> token) doc.tokens.push_back(token);
  return doc;
}

std::vector<TokenDocument> read_token_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir)) throw IngestError("token directory missing: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<TokenDocument> docs;
  docs.reserve(files.size());
  for (const auto& f : files) docs.push_back(read_token_document(f));
  return docs;
}

}  // namespace prism::timeline
