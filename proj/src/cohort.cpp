#include "prism/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "prism/errors.hpp"
#include "prism/events.hpp"

namespace prism::cohort {

std::string normalize_icd9(std::string_view code) {
  std::string out;
  out.reserve(code.size());
  for (char c : code) {
    if (c == '.' || c == ' ') continue;
    out.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  }
  return out;
}

bool is_valid_icd9(std::string_view s) {
  if (s.size() < 3 || s.size() > 5) return false;
  char lead = s[0];
  if (!(lead == 'V' || lead == 'E' || (lead >= '0' && lead <= '9'))) return false;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  return true;
}

void CohortSpec::validate() const {
  if (initial_codes.empty()) throw ConfigError("cohort spec: initial code set is empty");
  if (terminal_codes.empty()) throw ConfigError("cohort spec: terminal code set is empty");
  for (const auto& initial : initial_codes) {
    if (!is_valid_icd9(initial)) throw ConfigError("cohort spec: bad initial code " + initial);
    for (const auto& terminal : terminal_codes) {
      if (initial.starts_with(terminal) || initial == terminal) {
        throw ConfigError("cohort spec: initial code " + initial + " overlaps terminal entry " + terminal);
      }
    }
  }
}

bool CohortSpec::matches_terminal(const std::string& code) const {
  for (const auto& entry : terminal_codes) {
    if (code == entry || code.starts_with(entry)) return true;
  }
  return false;
}

CohortSpec CohortSpec::from_json(const nlohmann::json& j) {
  CohortSpec spec;
  for (const auto& code : j.at("initial")) {
    spec.initial_codes.insert(normalize_icd9(code.get<std::string>()));
  }
  for (const auto& code : j.at("terminal")) {
    spec.terminal_codes.insert(normalize_icd9(code.get<std::string>()));
  }
  spec.validate();
  return spec;
}

CohortSpec CohortSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open cohort spec: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad cohort spec JSON in " + path.string() + ": " + e.what());
  }
  try {
    return from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad cohort spec schema in " + path.string() + ": " + e.what());
  }
}

CohortSpec CohortSpec::defaults() {
  CohortSpec spec;
  spec.initial_codes = {"78650", "78651", "78652", "78659"};
  // Prefix families: acute MI through heart failure.
  spec.terminal_codes = {"410", "411", "412", "413", "414", "424", "425", "426", "427", "428"};
  return spec;
}

LoadReport load_diagnosis_records(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  std::vector<fs::path> files;
  if (fs::is_directory(path)) {
    for (const auto& entry : fs::recursive_directory_iterator(path)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
  } else if (fs::exists(path)) {
    files.push_back(path);
  } else {
    throw IngestError("no such file or directory: " + path.string());
  }

  LoadReport report;
  for (const auto& file : files) {
    auto read = read_event_csv(file);
    report.total_rows += read.total_rows;
    report.malformed_rows += read.malformed_rows;
    for (const auto& ev : read.events) {
      if (ev.event_class != EventClass::Diagnosis) continue;
      std::string code = normalize_icd9(ev.value.value_or(""));
      if (!is_valid_icd9(code)) {
        report.malformed_rows++;
        continue;
      }
      report.records.push_back({ev.subject_id, code, ev.time});
    }
  }
  if (report.total_rows > 0 &&
      report.malformed_rows * 10 > report.total_rows) {  // > 10% malformed
    throw ValidationError("more than 10% malformed rows under " + path.string() + " (" +
                          std::to_string(report.malformed_rows) + " of " +
                          std::to_string(report.total_rows) + ")");
  }
  std::sort(report.records.begin(), report.records.end(),
            [](const DiagnosisRecord& a, const DiagnosisRecord& b) {
              if (a.subject_id != b.subject_id) return a.subject_id < b.subject_id;
              if (a.time != b.time) return a.time < b.time;
              return a.icd9_code < b.icd9_code;
            });
  return report;
}

std::set<std::string> filter_initial_chest_pain(std::span<const DiagnosisRecord> records,
                                                const CohortSpec& spec) {
  spec.validate();
  std::set<std::string> included;
  std::map<std::string, std::int64_t> earliest;
  for (const auto& rec : records) {
    auto [it, inserted] = earliest.emplace(rec.subject_id, rec.time);
    if (!inserted) it->second = std::min(it->second, rec.time);
  }
  for (const auto& rec : records) {
    // Ties at the earliest instant count if any tied code qualifies.
    if (rec.time == earliest.at(rec.subject_id) && spec.initial_codes.contains(rec.icd9_code)) {
      included.insert(rec.subject_id);
    }
  }
  return included;
}

CohortResult filter_terminal_cardiac(std::span<const DiagnosisRecord> records,
                                     const std::set<std::string>& initial_set, const CohortSpec& spec) {
  spec.validate();
  std::map<std::string, std::int64_t> earliest;
  for (const auto& rec : records) {
    if (!initial_set.contains(rec.subject_id)) continue;
    auto [it, inserted] = earliest.emplace(rec.subject_id, rec.time);
    if (!inserted) it->second = std::min(it->second, rec.time);
  }
  CohortResult result;
  result.n_initial = initial_set.size();
  for (const auto& rec : records) {
    if (!initial_set.contains(rec.subject_id)) continue;
    if (rec.time > earliest.at(rec.subject_id) && spec.matches_terminal(rec.icd9_code)) {
      result.included.insert(rec.subject_id);
    }
  }
  result.n_terminal = result.included.size();
  return result;
}

std::string cohort_report(const CohortResult& result) {
  std::ostringstream out;
  out << "initial subjects: " << result.n_initial << "\n";
  out << "terminal subjects: " << result.n_terminal << "\n";
  out << "counts: " << result.n_initial << " / " << result.n_terminal << "\n";
  double rate = result.n_initial == 0
                    ? 0.0
                    : static_cast<double>(result.n_terminal) / static_cast<double>(result.n_initial);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", rate);
  out << "inclusion rate: " << buf << "\n";
  return out.str();
}

}  // namespace prism::cohort
