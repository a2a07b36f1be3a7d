#pragma once

// Flat key=value text: one pair per line, '#' starts a comment, blank lines
// ignored, surrounding whitespace trimmed. Used for config files and for the
// config block embedded in model files.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bitseg/error.hpp"

namespace bitseg::kv {

struct Entry {
  std::string key;
  std::string value;
  std::size_t line = 0;  // 1-based; 0 for values that did not come from a file
};

inline std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline Entry parse_pair(std::string_view text, std::size_t line) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("line " + std::to_string(line) + ": expected key=value, got '" +
                      std::string(text) + "'");
  Entry e{std::string(trim(text.substr(0, eq))), std::string(trim(text.substr(eq + 1))), line};
  if (e.key.empty()) throw ConfigError("line " + std::to_string(line) + ": empty key");
  return e;
}

inline std::vector<Entry> parse_lines(std::string_view text) {
  std::vector<Entry> out;
  std::size_t line = 0, pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line;
    auto body = text.substr(pos, nl - pos);
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (!body.empty()) out.push_back(parse_pair(body, line));
    pos = nl + 1;
  }
  return out;
}

inline std::string where(const Entry& e) {
  return e.line ? "line " + std::to_string(e.line) + ": " : std::string("override: ");
}

inline bool to_bool(const Entry& e) {
  if (e.value == "true" || e.value == "1") return true;
  if (e.value == "false" || e.value == "0") return false;
  throw ConfigError(where(e) + e.key + " expects true/false, got '" + e.value + "'");
}

inline std::uint64_t to_uint(const Entry& e) {
  std::uint64_t v = 0;
  const auto* end = e.value.data() + e.value.size();
  const auto r = std::from_chars(e.value.data(), end, v);
  if (e.value.empty() || r.ec != std::errc() || r.ptr != end)
    throw ConfigError(where(e) + e.key + " expects a non-negative integer, got '" + e.value + "'");
  return v;
}

inline double to_double(const Entry& e) {
  double v = 0;
  const auto* end = e.value.data() + e.value.size();
  const auto r = std::from_chars(e.value.data(), end, v);
  if (e.value.empty() || r.ec != std::errc() || r.ptr != end)
    throw ConfigError(where(e) + e.key + " expects a number, got '" + e.value + "'");
  return v;
}

// Comma-separated non-negative integers.
inline std::vector<std::size_t> to_uint_list(const Entry& e) {
  std::vector<std::size_t> out;
  std::string_view rest = e.value;
  while (true) {
    const auto comma = rest.find(',');
    Entry item{e.key, std::string(trim(rest.substr(0, comma))), e.line};
    out.push_back(static_cast<std::size_t>(to_uint(item)));
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

inline std::string from_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Shortest text that parses back to exactly the same double.
inline std::string from_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace bitseg::kv
