#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace streetcam::detail {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  // 1-based line number of each row in the source file.
  std::vector<std::size_t> lines;

  // Index of a named column; throws ValidationError naming the file when absent.
  std::size_t column(const std::string& name) const;
  std::filesystem::path source;
};

// RFC 4180-ish reader: quoted fields, doubled quotes, CRLF tolerated. Blank
// lines are skipped. An empty file yields an empty header and no rows.
CsvTable read_csv(const std::filesystem::path& path);

std::vector<std::string> split_csv_line(const std::string& line);

std::string csv_escape(const std::string& field);

}  // namespace streetcam::detail
