#pragma once

#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace diddml::csv {

// Minimal RFC 4180 reader: quoted fields, doubled quotes, CRLF tolerated.
class Table {
 public:
  static Table read(const std::string& path, char delimiter = ',');
  static Table parse(std::istream& in, char delimiter = ',');

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::optional<std::size_t> column(std::string_view name) const;
  // Throws DataError naming the column when absent.
  std::size_t require_column(std::string_view name) const;

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

std::string escape(std::string_view field, char delimiter = ',');
std::optional<double> parse_double(std::string_view s);
bool is_blank(std::string_view s);

}  // namespace diddml::csv
