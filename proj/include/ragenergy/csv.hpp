#pragma once

#include <cstddef>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ragenergy/error.hpp"

namespace ragenergy::csv {

using Row = std::vector<std::string>;

/// RFC 4180 reader: quoted fields may contain commas, quotes ("") and
/// newlines. A trailing CR on each record is dropped.
inline std::vector<Row> parse(std::string_view text) {
  std::vector<Row> rows;
  Row row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"': quoted = true; any = true; break;
      case ',': row.push_back(std::move(field)); field.clear(); any = true; break;
      case '\r': break;
      case '\n':
        if (any || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        row.clear();
        field.clear();
        any = false;
        break;
      default: field.push_back(c); any = true;
    }
  }
  if (quoted) throw Error(Errc::validation, "unterminated quoted CSV field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

/// Header-addressed view over parsed rows.
class Table {
 public:
  explicit Table(std::vector<Row> rows) : rows_(std::move(rows)) {
    if (rows_.empty()) return;
    for (std::size_t i = 0; i < rows_.front().size(); ++i) columns_[rows_.front()[i]] = i;
  }

  [[nodiscard]] std::size_t size() const noexcept { return rows_.empty() ? 0 : rows_.size() - 1; }
  [[nodiscard]] bool has(const std::string& column) const { return columns_.contains(column); }

  /// Cell of data row `r` (0-based, header excluded). Missing trailing cells read as "".
  [[nodiscard]] std::string get(std::size_t r, const std::string& column) const {
    auto it = columns_.find(column);
    if (it == columns_.end()) throw Error(Errc::validation, "missing CSV column '" + column + "'");
    const auto& row = rows_.at(r + 1);
    return it->second < row.size() ? row[it->second] : std::string();
  }

 private:
  std::vector<Row> rows_;
  std::map<std::string, std::size_t> columns_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ragenergy::csv
