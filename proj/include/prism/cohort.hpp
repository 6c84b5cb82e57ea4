#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace prism::cohort {

// One ICD-9 diagnosis row; codes are stored undotted.
struct DiagnosisRecord {
  std::string subject_id;
  std::string icd9_code;
  std::int64_t time = 0;
};

// Dots stripped, uppercased. Valid codes match [0-9VE][0-9]{2,4}.
std::string normalize_icd9(std::string_view code);
bool is_valid_icd9(std::string_view normalized);

struct CohortSpec {
  std::set<std::string> initial_codes;   // exact match
  std::set<std::string> terminal_codes;  // exact or prefix match

  void validate() const;
  bool matches_terminal(const std::string& normalized_code) const;

  static CohortSpec from_json(const nlohmann::json& j);
  static CohortSpec load(const std::filesystem::path& path);
  static CohortSpec defaults();
};

struct LoadReport {
  std::vector<DiagnosisRecord> records;  // sorted by (subject_id, time)
  std::size_t total_rows = 0;
  std::size_t malformed_rows = 0;
};

// Reads DIAGNOSIS-class rows from one event CSV or every *.csv under a
// directory. Malformed rows are counted, not dropped silently; more than 10%
// malformed fails validation.
LoadReport load_diagnosis_records(const std::filesystem::path& path);

std::set<std::string> filter_initial_chest_pain(std::span<const DiagnosisRecord> records,
                                                const CohortSpec& spec);

struct CohortResult {
  std::set<std::string> included;
  std::size_t n_initial = 0;
  std::size_t n_terminal = 0;
};

CohortResult filter_terminal_cardiac(std::span<const DiagnosisRecord> records,
                                     const std::set<std::string>& initial_set, const CohortSpec& spec);

std::string cohort_report(const CohortResult& result);

}  // namespace prism::cohort
