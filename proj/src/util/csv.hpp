// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal CSV for the artifact's own tables: comma separated, no quoting, so
// fields must not contain commas, quotes or line breaks.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "drl/error.hpp"

namespace drl::util {

inline std::vector<std::string> split_csv_line(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline void check_field(std::string_view field) {
  if (field.find_first_of(",\"\n\r") != std::string_view::npos)
    throw ValidationError("csv field '" + std::string(field) +
                          "' contains a comma, quote or line break");
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, std::string_view what) {
  double v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("cannot parse " + std::string(what) + " value '" + std::string(s) + "'");
  return v;
}

inline long long parse_int(std::string_view s, std::string_view what) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ValidationError("cannot parse " + std::string(what) + " value '" + std::string(s) + "'");
  return v;
}

/// Reads a table whose header must equal `expected`; returns the data rows.
inline std::vector<std::vector<std::string>> read_csv(const std::string& path,
                                                      const std::vector<std::string>& expected) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("'" + path + "' is empty");
  if (split_csv_line(line) != expected) {
    std::string want;
    for (std::size_t i = 0; i < expected.size(); ++i) want += (i ? "," : "") + expected[i];
    throw ValidationError("'" + path + "' has header '" + line + "', expected '" + want + "'");
  }
  std::vector<std::vector<std::string>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto row = split_csv_line(line);
    if (row.size() != expected.size())
      throw ValidationError("'" + path + "' line " + std::to_string(line_no) + " has " +
                            std::to_string(row.size()) + " fields, expected " +
                            std::to_string(expected.size()));
    rows.push_back(std::move(row));
  }
  return rows;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw RuntimeFailure("cannot write '" + path + "'");
    row(header);
  }
  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      check_field(fields[i]);
      if (i) out_ << ',';
      out_ << fields[i];
    }
    out_ << '\n';
  }
  void close() {
    out_.close();
    if (!out_) throw RuntimeFailure("write failed");
  }

 private:
  std::ofstream out_;
};

}  // namespace drl::util
