#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace prism {

// RFC-4180 records: quoted fields may contain commas, doubled quotes and
// newlines. Accepts LF and CRLF line endings.
std::vector<std::vector<std::string>> read_csv(std::istream& in);
std::vector<std::vector<std::string>> read_csv_file(const std::filesystem::path& path);

std::string csv_escape(const std::string& field);
void write_csv_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace prism
