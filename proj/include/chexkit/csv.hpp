#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chexkit/error.hpp"

namespace chexkit::csv {

// Comma-delimited, first row is the header. Double-quoted fields with ""
// escapes are accepted; CR before LF is dropped.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    return std::nullopt;
  }

  std::size_t require_column(std::string_view name) const {
    if (auto idx = column(name)) return *idx;
    fail(errc::missing_column, "column \"" + std::string(name) + "\" not found");
  }
};

namespace detail {

inline std::vector<std::string> split_line(std::string_view line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"' && field.empty()) {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) {
    fail(errc::bad_value, "unterminated quote on line " + std::to_string(line_no));
  }
  fields.push_back(std::move(field));
  return fields;
}

}  // namespace detail

inline Table parse(std::string_view text) {
  Table table;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    if (start == text.size()) {
      break;
    }
    std::size_t end = text.find('\n', start);
    std::string_view line = (end == std::string_view::npos)
                                ? text.substr(start)
                                : text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line_no == 1) {
      table.header = detail::split_line(line, line_no);
    } else if (!line.empty()) {
      auto fields = detail::split_line(line, line_no);
      if (fields.size() != table.header.size()) {
        fail(errc::bad_value,
             "line " + std::to_string(line_no) + " has " +
                 std::to_string(fields.size()) + " fields, expected " +
                 std::to_string(table.header.size()));
      }
      table.rows.push_back(std::move(fields));
    }
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return table;
}

inline std::string escape(std::string_view field) {
  if (field.find_first_of(",\"\n\r") == std::string_view::npos) {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

}  // namespace chexkit::csv
