#include "prism/events.hpp"

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "prism/csv.hpp"
#include "prism/errors.hpp"

namespace prism {

namespace {

constexpr std::array<std::string_view, 7> kClassNames = {
    "DEMOGRAPHIC", "ADMISSION", "OMR", "LAB", "MICROBIOLOGY", "DIAGNOSIS", "DISCHARGE"};

// Days since 1970-01-01 for a proleptic Gregorian date (Howard Hinnant's
// days_from_civil).
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, std::int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

int parse_digits(std::string_view s, std::size_t pos, std::size_t n) {
  if (pos + n > s.size()) throw ValidationError("timestamp too short: " + std::string(s));
  int v = 0;
  for (std::size_t i = 0; i < n; ++i) {
    char c = s[pos + i];
    if (c < '0' || c > '9') throw ValidationError("timestamp not numeric: " + std::string(s));
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace

int class_rank(EventClass c) {
  switch (c) {
    case EventClass::Demographic: return 0;
    case EventClass::Admission: return 1;
    case EventClass::Omr: return 2;
    case EventClass::Lab: return 3;
    case EventClass::Microbiology: return 4;
    case EventClass::Diagnosis: return 5;
    case EventClass::Discharge: return 6;
  }
  return 7;
}

std::string_view to_string(EventClass c) {
  return kClassNames[static_cast<std::size_t>(c)];
}

std::optional<EventClass> parse_event_class(std::string_view s) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (s == kClassNames[i]) return static_cast<EventClass>(i);
  }
  return std::nullopt;
}

std::int64_t parse_instant(std::string_view s) {
  // YYYY-MM-DDTHH:MM:SS[.fff](Z|+HH:MM|-HH:MM)
  if (s.size() < 20) throw ValidationError("bad timestamp: " + std::string(s));
  int year = parse_digits(s, 0, 4);
  int month = parse_digits(s, 5, 2);
  int day = parse_digits(s, 8, 2);
  if (s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ')) {
    throw ValidationError("bad timestamp: " + std::string(s));
  }
  int hour = parse_digits(s, 11, 2);
  int minute = parse_digits(s, 14, 2);
  int second = parse_digits(s, 17, 2);
  if (s[13] != ':' || s[16] != ':') throw ValidationError("bad timestamp: " + std::string(s));
  if (month < 1 || month > 12 || day < 1 || day > 31 || hour > 23 || minute > 59 || second > 60) {
    throw ValidationError("timestamp out of range: " + std::string(s));
  }
  std::size_t pos = 19;
  if (pos < s.size() && s[pos] == '.') {
    ++pos;
    while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
  }
  if (pos >= s.size()) throw ValidationError("timestamp missing offset: " + std::string(s));
  std::int64_t offset = 0;
  if (s[pos] == 'Z') {
    if (pos + 1 != s.size()) throw ValidationError("bad timestamp: " + std::string(s));
  } else if (s[pos] == '+' || s[pos] == '-') {
    int sign = s[pos] == '+' ? 1 : -1;
    int oh = parse_digits(s, pos + 1, 2);
    if (pos + 3 >= s.size() || s[pos + 3] != ':') {
      throw ValidationError("bad timestamp offset: " + std::string(s));
    }
    int om = parse_digits(s, pos + 4, 2);
    if (pos + 6 != s.size()) throw ValidationError("bad timestamp: " + std::string(s));
    offset = sign * (oh * 3600 + om * 60);
  } else {
    throw ValidationError("bad timestamp offset: " + std::string(s));
  }
  std::int64_t days = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day));
  return days * 86400 + hour * 3600 + minute * 60 + second - offset;
}

std::string format_instant(std::int64_t t) {
  std::int64_t days = t >= 0 ? t / 86400 : (t - 86399) / 86400;
  std::int64_t rem = t - days * 86400;
  std::int64_t y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04lld-%02u-%02uT%02lld:%02lld:%02lld+00:00",
                static_cast<long long>(y), m, d, static_cast<long long>(rem / 3600),
                static_cast<long long>((rem / 60) % 60), static_cast<long long>(rem % 60));
  return buf;
}

EventReadResult read_event_csv(const std::filesystem::path& path) {
  auto rows = read_csv_file(path);
  if (rows.empty()) throw IngestError("event csv missing header: " + path.string());

  std::string header;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    if (i) header.push_back(',');
    header += rows[0][i];
  }
  if (header != kEventCsvHeader) {
    throw IngestError("event csv bad header in " + path.string() + ": " + header);
  }

  EventReadResult result;
  auto opt = [](const std::string& s) -> std::optional<std::string> {
    if (s.empty()) return std::nullopt;
    return s;
  };
  for (std::size_t r = 1; r < rows.size(); ++r) {
    result.total_rows++;
    const auto& row = rows[r];
    try {
      if (row.size() != 8) throw ValidationError("expected 8 fields, got " + std::to_string(row.size()));
      ClinicalEvent ev;
      ev.subject_id = row[0];
      if (ev.subject_id.empty()) throw ValidationError("empty subject_id");
      ev.time = parse_instant(row[1]);
      auto cls = parse_event_class(row[2]);
      if (!cls) throw ValidationError("unknown event_class: " + row[2]);
      ev.event_class = *cls;
      ev.name = row[3];
      if (ev.name.empty()) throw ValidationError("empty name");
      ev.value = opt(row[4]);
      ev.unit = opt(row[5]);
      ev.flag = opt(row[6]);
      ev.detail = opt(row[7]);
      result.events.push_back(std::move(ev));
    } catch (const ValidationError& e) {
      result.malformed_rows++;
      result.row_errors.push_back(path.filename().string() + ":" + std::to_string(r + 1) + ": " + e.what());
    }
  }
  return result;
}

void write_event_csv(const std::filesystem::path& path, std::span<const ClinicalEvent> events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out << kEventCsvHeader << '\n';
  for (const auto& ev : events) {
    write_csv_row(out, {ev.subject_id, format_instant(ev.time), std::string(to_string(ev.event_class)),
                        ev.name, ev.value.value_or(""), ev.unit.value_or(""), ev.flag.value_or(""),
                        ev.detail.value_or("")});
  }
  if (!out) throw IngestError("write failed: " + path.string());
}

}  // namespace prism
