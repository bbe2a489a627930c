#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "heatsd/errors.hpp"

namespace heatsd {

// Flat TOML subset: `key = value` lines, # comments, blank lines. Values are
// numbers, "strings", booleans, or homogeneous one-level arrays of those.
// Sections and nesting are rejected with a pointed message — the experiment
// schema is deliberately flat.
struct TomlValue {
  enum class Kind { number, string, boolean, number_array, string_array };
  Kind kind = Kind::number;
  double number = 0.0;
  std::string str;
  bool boolean = false;
  std::vector<double> numbers;
  std::vector<std::string> strings;
  int line = 0;
};

using TomlTable = std::map<std::string, TomlValue>;

namespace toml_detail {

[[noreturn]] inline void parse_fail(int line, const std::string& msg) {
  fail(ErrorKind::parse, "line " + std::to_string(line) + ": " + msg);
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

// Cut an inline comment, honoring quotes.
inline std::string strip_comment(const std::string& s) {
  bool in_str = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
    if (s[i] == '#' && !in_str) return s.substr(0, i);
  }
  return s;
}

inline bool valid_key(const std::string& k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-')
      return false;
  return true;
}

inline std::string parse_string_token(const std::string& tok, int line) {
  if (tok.size() < 2 || tok.back() != '"') parse_fail(line, "unterminated string");
  std::string out;
  for (std::size_t i = 1; i + 1 < tok.size(); ++i) {
    if (tok[i] == '\\') {
      if (i + 2 >= tok.size()) parse_fail(line, "dangling escape in string");
      char c = tok[++i];
      if (c == '"') out += '"';
      else if (c == '\\') out += '\\';
      else if (c == 'n') out += '\n';
      else if (c == 't') out += '\t';
      else parse_fail(line, std::string("unsupported escape \\") + c);
    } else if (tok[i] == '"') {
      parse_fail(line, "unexpected quote inside string");
    } else {
      out += tok[i];
    }
  }
  return out;
}

inline double parse_number_token(const std::string& tok, int line) {
  // TOML allows readability underscores between digits.
  std::string clean;
  for (char c : tok)
    if (c != '_') clean += c;
  const char* begin = clean.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + clean.size() || clean.empty())
    parse_fail(line, "'" + tok + "' is not a number");
  return v;
}

inline std::vector<std::string> split_array_items(const std::string& inner, int line) {
  std::vector<std::string> items;
  std::string cur;
  bool in_str = false;
  for (std::size_t i = 0; i < inner.size(); ++i) {
    char c = inner[i];
    if (c == '"' && (i == 0 || inner[i - 1] != '\\')) in_str = !in_str;
    if (c == '[' && !in_str) parse_fail(line, "nested arrays are not supported");
    if (c == ',' && !in_str) {
      items.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string last = trim(cur);
  if (!last.empty()) items.push_back(last);  // trailing comma tolerated
  for (const std::string& it : items)
    if (it.empty()) parse_fail(line, "empty array element");
  return items;
}

inline TomlValue parse_value(const std::string& raw, int line) {
  TomlValue v;
  v.line = line;
  if (raw.empty()) parse_fail(line, "missing value");
  if (raw.front() == '"') {
    v.kind = TomlValue::Kind::string;
    v.str = parse_string_token(raw, line);
  } else if (raw == "true" || raw == "false") {
    v.kind = TomlValue::Kind::boolean;
    v.boolean = raw == "true";
  } else if (raw.front() == '[') {
    if (raw.back() != ']') parse_fail(line, "unterminated array");
    const auto items = split_array_items(raw.substr(1, raw.size() - 2), line);
    if (items.empty()) parse_fail(line, "empty arrays are ambiguous; omit the key");
    if (items.front().front() == '"') {
      v.kind = TomlValue::Kind::string_array;
      for (const auto& it : items) {
        if (it.front() != '"') parse_fail(line, "mixed-type array");
        v.strings.push_back(parse_string_token(it, line));
      }
    } else {
      v.kind = TomlValue::Kind::number_array;
      for (const auto& it : items) {
        if (it.front() == '"') parse_fail(line, "mixed-type array");
        v.numbers.push_back(parse_number_token(it, line));
      }
    }
  } else {
    v.kind = TomlValue::Kind::number;
    v.number = parse_number_token(raw, line);
  }
  return v;
}

}  // namespace toml_detail

inline TomlTable parse_toml(const std::string& text) {
  TomlTable table;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string body = toml_detail::trim(toml_detail::strip_comment(line));
    if (body.empty()) continue;
    if (body.front() == '[')
      toml_detail::parse_fail(lineno, "sections are not supported; use flat keys");
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      toml_detail::parse_fail(lineno, "expected 'key = value'");
    const std::string key = toml_detail::trim(body.substr(0, eq));
    if (!toml_detail::valid_key(key))
      toml_detail::parse_fail(lineno, "invalid key '" + key + "'");
    if (table.count(key))
      toml_detail::parse_fail(lineno, "duplicate key '" + key + "'");
    table[key] = toml_detail::parse_value(toml_detail::trim(body.substr(eq + 1)), lineno);
  }
  return table;
}

inline TomlTable parse_toml_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_toml(buf.str());
}

}  // namespace heatsd
