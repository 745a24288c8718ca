#pragma once

// Minimal CSV for manifests and report tables: comma separated, no quoting.
// Cells containing commas, quotes or newlines are rejected on write.

#include <filesystem>
#include <string>
#include <vector>

namespace morphcf {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of a header column; throws InvalidArgument naming the column if absent.
  int column(const std::string& name) const;
  bool has_column(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);
void write_csv(const CsvTable& table, const std::filesystem::path& path);

/// Shortest round-trip decimal representation.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& context);

}  // namespace morphcf
