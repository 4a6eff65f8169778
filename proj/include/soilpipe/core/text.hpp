#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "soilpipe/core/errors.hpp"

namespace soilpipe {

inline constexpr std::string_view kNotAValue = "NA";

/// Shortest representation that parses back to the same double; NaN is "NA".
inline std::string format_double(double v) {
  if (std::isnan(v)) return std::string(kNotAValue);
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

/// Fixed-point rendering for human-facing tables.
inline std::string format_fixed(double v, int digits) {
  if (std::isnan(v)) return std::string(kNotAValue);
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, digits);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

/// Parses a decimal number; "NA" and the empty field yield NaN.
inline bool try_parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty() || s == kNotAValue) {
    out = std::numeric_limits<double>::quiet_NaN();
    return true;
  }
  if (s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

inline double parse_double(std::string_view s, std::size_t line) {
  double v;
  if (!try_parse_double(s, v)) throw ParseError(line, "not a number: '" + std::string(s) + "'");
  return v;
}

inline std::int64_t parse_int(std::string_view s, std::size_t line) {
  s = trim(s);
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ParseError(line, "not an integer: '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_uint64(std::string_view s, std::size_t line) {
  s = trim(s);
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || s.empty())
    throw ParseError(line, "not an unsigned integer: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

/// Delimited text rows with the header split off. Lines starting with '#' are
/// metadata and are returned separately.
struct DelimitedFile {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;
  std::vector<std::string> comments;

  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    return npos;
  }
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
};

inline DelimitedFile parse_delimited(std::istream& in, char delim = ',') {
  DelimitedFile file;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = trim(line);
    if (view.empty()) continue;
    if (view.front() == '#') {
      file.comments.emplace_back(view.substr(1));
      continue;
    }
    std::vector<std::string> fields;
    for (auto f : split_fields(view, delim)) fields.emplace_back(f);
    if (!have_header) {
      file.header = std::move(fields);
      have_header = true;
      continue;
    }
    if (fields.size() != file.header.size())
      throw ParseError(line_no, "expected " + std::to_string(file.header.size()) + " fields, got " +
                                    std::to_string(fields.size()));
    file.rows.push_back(std::move(fields));
    file.line_numbers.push_back(line_no);
  }
  return file;
}

inline DelimitedFile read_delimited(const std::string& path, char delim = ',') {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_delimited(in, delim);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

template <typename Range>
std::string join(const Range& items, std::string_view sep) {
  std::string out;
  bool first = true;
  for (const auto& item : items) {
    if (!first) out += sep;
    out += item;
    first = false;
  }
  return out;
}

}  // namespace soilpipe
