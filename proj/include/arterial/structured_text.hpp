#pragma once

// Minimal structured-text format shared by corridor, scenario and sweep files:
//
//   # comment
//   section label {
//     key = value
//     nested { key = value }
//   }
//
// Values are raw strings; typed accessors report the line of the offending
// entry on failure.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "arterial/error.hpp"

namespace arterial {

struct Entry {
  std::string key;
  std::string value;
  int line = 0;
};

struct Section {
  std::string name;
  std::string label;
  int line = 0;
  std::vector<Entry> entries;
  std::vector<Section> children;

  const Entry* find(std::string_view key) const {
    for (const auto& e : entries) {
      if (e.key == key) return &e;
    }
    return nullptr;
  }

  std::vector<const Section*> children_named(std::string_view child) const {
    std::vector<const Section*> out;
    for (const auto& c : children) {
      if (c.name == child) out.push_back(&c);
    }
    return out;
  }

  const Section* child(std::string_view child_name) const {
    for (const auto& c : children) {
      if (c.name == child_name) return &c;
    }
    return nullptr;
  }

  Section& add(std::string key, std::string value) {
    entries.push_back(Entry{std::move(key), std::move(value), 0});
    return *this;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] inline void parse_fail(int line, const std::string& msg) {
  throw Error(ErrorKind::Parse, "line " + std::to_string(line) + ": " + msg);
}

inline bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

}  // namespace detail

inline Section parse_structured(std::string_view text) {
  Section root;
  std::vector<Section*> stack{&root};
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = (nl == std::string_view::npos) ? text.size() + 1 : nl + 1;
    ++line_no;

    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    std::string_view line = detail::trim(raw);
    if (line.empty()) continue;

    if (line == "}") {
      if (stack.size() == 1) detail::parse_fail(line_no, "unmatched '}'");
      stack.pop_back();
      continue;
    }
    if (line.back() == '{') {
      std::string_view head = detail::trim(line.substr(0, line.size() - 1));
      const auto space = head.find_first_of(" \t");
      Section s;
      s.line = line_no;
      s.name = std::string(head.substr(0, space));
      if (space != std::string_view::npos) s.label = std::string(detail::trim(head.substr(space)));
      if (!detail::is_identifier(s.name)) detail::parse_fail(line_no, "bad section name '" + s.name + "'");
      if (!s.label.empty() && !detail::is_identifier(s.label)) {
        detail::parse_fail(line_no, "bad section label '" + s.label + "'");
      }
      stack.back()->children.push_back(std::move(s));
      stack.push_back(&stack.back()->children.back());
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) detail::parse_fail(line_no, "expected 'key = value', '{' or '}'");
    std::string_view key = detail::trim(line.substr(0, eq));
    std::string_view value = detail::trim(line.substr(eq + 1));
    if (!detail::is_identifier(key)) detail::parse_fail(line_no, "bad key '" + std::string(key) + "'");
    if (stack.back()->find(key)) detail::parse_fail(line_no, "duplicate key '" + std::string(key) + "'");
    stack.back()->entries.push_back(Entry{std::string(key), std::string(value), line_no});
  }
  if (stack.size() != 1) {
    detail::parse_fail(stack.back()->line, "section '" + stack.back()->name + "' is never closed");
  }
  return root;
}

inline void format_section(std::ostringstream& out, const Section& s, int depth) {
  const std::string indent(static_cast<std::size_t>(depth) * 2, ' ');
  for (const auto& e : s.entries) out << indent << e.key << " = " << e.value << '\n';
  for (const auto& c : s.children) {
    out << indent << c.name;
    if (!c.label.empty()) out << ' ' << c.label;
    out << " {\n";
    format_section(out, c, depth + 1);
    out << indent << "}\n";
  }
}

inline std::string format_structured(const Section& root) {
  std::ostringstream out;
  format_section(out, root, 0);
  return out.str();
}

// ---- typed accessors -------------------------------------------------------

inline std::string describe(const Section& s) {
  std::string d = "section '" + s.name;
  if (!s.label.empty()) d += " " + s.label;
  return d + "'";
}

[[noreturn]] inline void value_fail(const Entry& e, const std::string& msg) {
  detail::parse_fail(e.line, "key '" + e.key + "': " + msg);
}

inline const Entry& require(const Section& s, std::string_view key) {
  if (const Entry* e = s.find(key)) return *e;
  detail::parse_fail(s.line, describe(s) + " is missing key '" + std::string(key) + "'");
}

inline double parse_double(const Entry& e, std::string_view text) {
  double v = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) value_fail(e, "expected a number, got '" + std::string(text) + "'");
  return v;
}

inline double get_double(const Section& s, std::string_view key) {
  const Entry& e = require(s, key);
  return parse_double(e, e.value);
}

inline double get_double(const Section& s, std::string_view key, double fallback) {
  const Entry* e = s.find(key);
  return e ? parse_double(*e, e->value) : fallback;
}

inline std::int64_t parse_int(const Entry& e, std::string_view text) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    value_fail(e, "expected an integer, got '" + std::string(text) + "'");
  }
  return v;
}

inline std::int64_t get_int(const Section& s, std::string_view key) {
  const Entry& e = require(s, key);
  return parse_int(e, e.value);
}

inline std::int64_t get_int(const Section& s, std::string_view key, std::int64_t fallback) {
  const Entry* e = s.find(key);
  return e ? parse_int(*e, e->value) : fallback;
}

inline bool parse_bool(const Entry& e) {
  if (e.value == "true" || e.value == "yes" || e.value == "1") return true;
  if (e.value == "false" || e.value == "no" || e.value == "0") return false;
  value_fail(e, "expected true/false, got '" + e.value + "'");
}

inline bool get_bool(const Section& s, std::string_view key, bool fallback) {
  const Entry* e = s.find(key);
  return e ? parse_bool(*e) : fallback;
}

inline std::string get_string(const Section& s, std::string_view key) { return require(s, key).value; }

inline std::string get_string(const Section& s, std::string_view key, std::string fallback) {
  const Entry* e = s.find(key);
  return e ? e->value : fallback;
}

/// Comma-separated list; empty value yields an empty list.
inline std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  value = detail::trim(value);
  if (value.empty()) return out;
  std::size_t pos = 0;
  while (pos <= value.size()) {
    const auto comma = value.find(',', pos);
    auto item = detail::trim(value.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

inline void expect_keys(const Section& s, std::initializer_list<std::string_view> allowed) {
  for (const auto& e : s.entries) {
    if (std::find(allowed.begin(), allowed.end(), e.key) == allowed.end()) {
      detail::parse_fail(e.line, "unknown key '" + e.key + "' in " + describe(s));
    }
  }
}

inline void expect_children(const Section& s, std::initializer_list<std::string_view> allowed) {
  for (const auto& c : s.children) {
    if (std::find(allowed.begin(), allowed.end(), c.name) == allowed.end()) {
      detail::parse_fail(c.line, "unexpected section '" + c.name + "' in " + describe(s));
    }
  }
}

/// Shortest round-trip decimal representation of a double.
inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace arterial
