#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "idsp/error.hpp"

namespace idsp::csv {

struct Row {
  std::size_t line = 0;  // 1-based line number in the file
  std::vector<std::string> fields;
};

struct Table {
  std::string source;
  std::vector<std::string> header;
  std::vector<Row> rows;
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits one line on commas; double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(trim(cur));
  return out;
}

/// Reads a CSV file whose header must start with `required` (further columns
/// are allowed only when `allow_extra`). Blank lines are skipped.
inline Table read(const std::filesystem::path& path, const std::vector<std::string>& required,
                  bool allow_extra = false) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  Table t;
  t.source = path.filename().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (trim(line).empty()) continue;
    auto fields = split_line(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      const bool prefix_ok = t.header.size() >= required.size() &&
                             std::equal(required.begin(), required.end(), t.header.begin());
      if (!prefix_ok || (!allow_extra && t.header.size() != required.size())) {
        std::string want;
        for (const auto& r : required) want += (want.empty() ? "" : ",") + r;
        throw DataError(t.source + ":" + std::to_string(lineno) + ": header must be '" + want +
                        "'" + (allow_extra ? " (extra columns may follow)" : ""));
      }
      continue;
    }
    if (fields.size() != t.header.size()) {
      throw DataError(t.source + ":" + std::to_string(lineno) + ": malformed row, expected " +
                      std::to_string(t.header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.empty()) throw DataError(t.source + ":" + std::to_string(lineno) + ": empty field");
    }
    t.rows.push_back({lineno, std::move(fields)});
  }
  if (t.header.empty()) throw DataError(t.source + ": missing header row");
  return t;
}

/// Parses a finite double or throws naming the file, line and column.
inline double to_double(const Table& t, const Row& r, std::size_t col) {
  const std::string& s = r.fields[col];
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
    throw DataError(t.source + ":" + std::to_string(r.line) + ": non-numeric " + t.header[col] +
                    " '" + s + "'");
  }
  return v;
}

}  // namespace idsp::csv
