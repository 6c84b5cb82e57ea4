#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace prism {

enum class EventClass {
  Demographic,
  Admission,
  Omr,
  Lab,
  Microbiology,
  Diagnosis,
  Discharge,
};

// Tie-break rank for simultaneous events. Demographics rank lowest and are
// additionally hoisted to the front of the document regardless of timestamp.
int class_rank(EventClass c);

std::string_view to_string(EventClass c);
std::optional<EventClass> parse_event_class(std::string_view s);

// One timestamped patient event, one row of the event CSV.
struct ClinicalEvent {
  std::string subject_id;
  std::int64_t time = 0;  // seconds since the Unix epoch, UTC
  EventClass event_class = EventClass::Demographic;
  std::string name;
  std::optional<std::string> value;
  std::optional<std::string> unit;
  std::optional<std::string> flag;
  std::optional<std::string> detail;
};

// ISO-8601 instants. Parsing accepts `Z` or `+HH:MM`/`-HH:MM` offsets and an
// optional fractional-seconds part (truncated); formatting always emits UTC
// with a `+00:00` offset.
std::int64_t parse_instant(std::string_view iso8601);
std::string format_instant(std::int64_t epoch_seconds);

inline constexpr std::string_view kEventCsvHeader =
    "subject_id,timestamp,event_class,name,value,unit,flag,detail";

struct EventReadResult {
  std::vector<ClinicalEvent> events;
  std::size_t total_rows = 0;  // data rows, excluding the header
  std::size_t malformed_rows = 0;
  std::vector<std::string> row_errors;
};

EventReadResult read_event_csv(const std::filesystem::path& path);
void write_event_csv(const std::filesystem::path& path, std::span<const ClinicalEvent> events);

}  // namespace prism
