#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "robust3s/core.hpp"

// Minimal numeric CSV layer: comma separated, one required header row, UTF-8.
// "NA" and empty fields parse to NaN when the caller allows missing values;
// otherwise they are a data_error naming the line and column.

namespace robust3s {
namespace io {

struct CsvTable {
  std::vector<std::string> header;
  Matrix values;  // NaN marks missing cells (only when allow_missing)

  Index col(const std::string& name) const;  // -1 when absent
};

CsvTable read_csv(std::istream& in, bool allow_missing = false);
CsvTable read_csv_file(const std::string& path, bool allow_missing = false);

/// Writes with 17 significant digits; NaN cells become the sentinel.
void write_csv(std::ostream& out, const std::vector<std::string>& header,
               Eigen::Ref<const Matrix> values, const std::string& na = "NA");

}  // namespace io
}  // namespace robust3s
