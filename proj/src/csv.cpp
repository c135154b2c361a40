#include "robust3s/csv.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace robust3s {
namespace io {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  out.push_back(field);
  return out;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

Index CsvTable::col(const std::string& name) const {
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<Index>(j);
  return -1;
}

CsvTable read_csv(std::istream& in, bool allow_missing) {
  std::string line;
  if (!std::getline(in, line)) throw data_error("empty sample");
  CsvTable table;
  for (std::string& h : split_line(line)) table.header.push_back(trim(h));
  const std::size_t ncol = table.header.size();
  if (ncol == 0 || (ncol == 1 && table.header[0].empty())) throw data_error("empty sample");

  std::vector<double> cells;
  std::size_t nrow = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != ncol) {
      std::ostringstream ss;
      ss << "line " << lineno << ": expected " << ncol << " fields, found " << fields.size();
      throw data_error(ss.str());
    }
    for (std::size_t j = 0; j < ncol; ++j) {
      const std::string f = trim(fields[j]);
      if (f.empty() || f == "NA" || f == "na" || f == "NaN") {
        if (!allow_missing) {
          std::ostringstream ss;
          ss << "line " << lineno << ", column " << (j + 1) << " (" << table.header[j]
             << "): missing value not allowed here";
          throw data_error(ss.str());
        }
        cells.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      char* end = nullptr;
      const double v = std::strtod(f.c_str(), &end);
      if (end == f.c_str() || *end != '\0') {
        std::ostringstream ss;
        ss << "line " << lineno << ", column " << (j + 1) << " (" << table.header[j]
           << "): cannot parse '" << f << "' as a number";
        throw data_error(ss.str());
      }
      cells.push_back(v);
    }
    ++nrow;
  }
  if (nrow == 0) throw data_error("empty sample");

  table.values.resize(static_cast<Index>(nrow), static_cast<Index>(ncol));
  for (std::size_t i = 0; i < nrow; ++i)
    for (std::size_t j = 0; j < ncol; ++j)
      table.values(static_cast<Index>(i), static_cast<Index>(j)) = cells[i * ncol + j];
  return table;
}

CsvTable read_csv_file(const std::string& path, bool allow_missing) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open file: " + path);
  return read_csv(in, allow_missing);
}

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               Eigen::Ref<const Matrix> values, const std::string& na) {
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  char buf[40];
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      if (j) out << ',';
      if (std::isnan(values(i, j))) {
        out << na;
      } else {
        std::snprintf(buf, sizeof(buf), "%.17g", values(i, j));
        out << buf;
      }
    }
    out << '\n';
  }
}

}  // namespace io
}  // namespace robust3s
