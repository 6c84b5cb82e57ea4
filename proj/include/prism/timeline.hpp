#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prism/events.hpp"

namespace prism::timeline {

// Ordered space-delimited token sequence for one patient.
struct TokenDocument {
  std::string subject_id;
  std::vector<std::string> tokens;

  bool operator==(const TokenDocument&) const = default;
};

// Uppercase, collapse whitespace and punctuation runs to single underscores,
// keep [A-Z0-9_.]; empty or missing input becomes the placeholder.
std::string normalize_text(const std::optional<std::string>& raw, std::string_view placeholder);

// Lab/OMR numeric discretization thresholds, keyed by normalized name.
class ReferenceRanges {
 public:
  ReferenceRanges() = default;
  static ReferenceRanges load(const std::filesystem::path& path);

  void set(const std::string& name, double low, double high);
  // LOW / NORMAL / HIGH if `value` parses numeric and a range is configured.
  std::optional<std::string> bucket(const std::string& normalized_name,
                                    const std::optional<std::string>& value) const;

 private:
  std::map<std::string, std::pair<double, double>> ranges_;
};

// One token per event, per the fixed per-class templates.
std::string render_token(const ClinicalEvent& event, const ReferenceRanges& ranges);

// Sorted by (timestamp, class precedence, rendered token); demographics lead
// the document regardless of timestamp, ordered by name. All events must
// share one subject.
std::vector<ClinicalEvent> order_events(std::vector<ClinicalEvent> events,
                                        const ReferenceRanges& ranges);

TokenDocument tokenize_patient(std::vector<ClinicalEvent> events, const ReferenceRanges& ranges);

struct CorpusSummary {
  std::size_t n_docs = 0;
  std::size_t n_tokens = 0;
  std::vector<std::string> failures;  // per-file parse errors, processing continued
};

// Converts every patient_*.csv under in_dir (recursively) into a same-stem
// .txt token document in out_dir: one line, single-space separated, trailing
// newline.
CorpusSummary tokenize_corpus(const std::filesystem::path& in_dir,
                              const std::filesystem::path& out_dir, const ReferenceRanges& ranges);

std::string to_line(const TokenDocument& doc);
TokenDocument read_token_document(const std::filesystem::path& path);
std::vector<TokenDocument> read_token_dir(const std::filesystem::path& dir);

}  // namespace prism::timeline
