#include "morphcf/csv.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "morphcf/error.hpp"

namespace morphcf {

int CsvTable::column(const std::string& name) const {
  for (std::size_t c = 0; c < header.size(); ++c)
    if (header[c] == name) return static_cast<int>(c);
  throw InvalidArgument("CSV has no column '" + name + "'");
}

bool CsvTable::has_column(const std::string& name) const {
  for (const auto& h : header)
    if (h == name) return true;
  return false;
}

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::open_failed, "cannot open " + path.string());
  CsvTable t;
  std::string line;
  if (!std::getline(in, line)) throw IoError(IoErrorKind::bad_header, path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split(line);
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != t.header.size())
      throw IoError(IoErrorKind::bad_header, path.string() + ":" + std::to_string(lineno) + " has " +
                                                 std::to_string(row.size()) + " cells, expected " +
                                                 std::to_string(t.header.size()));
    t.rows.push_back(std::move(row));
  }
  return t;
}

void write_csv(const CsvTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::open_failed, "cannot write " + path.string());
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (row[c].find_first_of(",\"\n\r") != std::string::npos)
        throw InvalidArgument("CSV cell '" + row[c] + "' contains a delimiter");
      out << (c ? "," : "") << row[c];
    }
    out << "\n";
  };
  emit(table.header);
  for (const auto& r : table.rows) emit(r);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw InvalidArgument(context + ": '" + s + "' is not a number");
  return v;
}

}  // namespace morphcf
