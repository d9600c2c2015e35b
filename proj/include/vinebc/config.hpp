#pragma once

// Flat `key = value` configuration files.
//
//   # comment
//   method = gn_vbc
//   families = "gaussian, hurdle_gamma"
//
// Keys are checked against a schema; unknown keys and repeated keys are
// errors.

#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "vinebc/core.hpp"

namespace vinebc {

struct KeySpec {
  std::string name;
  std::string default_value;  // empty: no default
  std::string help;
};

using ConfigSchema = std::vector<KeySpec>;

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& in, const ConfigSchema& schema) {
    Config c;
    c.schema_ = schema;
    std::stringstream raw;
    raw << in.rdbuf();
    c.text_ = raw.str();
    std::istringstream lines(c.text_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(lines, line)) {
      ++lineno;
      const std::string where = "config line " + std::to_string(lineno);
      const std::string t = detail::trim(strip_comment(line));
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
      const std::string key = detail::trim(t.substr(0, eq));
      std::string value = detail::trim(t.substr(eq + 1));
      if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (!c.find_spec(key)) throw ConfigError(where + ": unknown key '" + key + "'");
      if (c.values_.count(key)) throw ConfigError(where + ": key '" + key + "' given twice");
      c.values_[key] = value;
    }
    return c;
  }

  static Config load(const std::string& path, const ConfigSchema& schema) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    return parse(in, schema);
  }

  static Config defaults(const ConfigSchema& schema) {
    std::istringstream empty;
    return parse(empty, schema);
  }

  /// Command-line overrides win over file values.
  void set(const std::string& key, const std::string& value) {
    if (!find_spec(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) || !spec(key).default_value.empty(); }

  std::string str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it != values_.end()) return it->second;
    const auto& s = spec(key);
    if (s.default_value.empty()) throw ConfigError("missing required key '" + key + "'");
    return s.default_value;
  }

  std::optional<std::string> optional_str(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    const std::string v = str(key);
    if (v.empty()) return std::nullopt;
    return v;
  }

  double real(const std::string& key) const {
    const std::string v = str(key);
    try {
      return detail::parse_double(v, key);
    } catch (const DataError&) {
      throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    }
  }

  long long integer(const std::string& key) const {
    const std::string v = str(key);
    long long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    return out;
  }

  std::size_t count(const std::string& key) const {
    const long long v = integer(key);
    if (v < 0) throw ConfigError("key '" + key + "' must be non-negative");
    return static_cast<std::size_t>(v);
  }

  bool boolean(const std::string& key) const {
    const std::string v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    const auto v = optional_str(key);
    if (!v || detail::trim(*v).empty()) return out;
    for (const auto& part : detail::split(*v, ',')) out.push_back(detail::trim(part));
    return out;
  }

  const std::string& text() const { return text_; }
  /// Hash of the effective key/value set, so overrides and defaults count.
  std::string hash() const {
    std::string flat;
    for (const auto& [k, v] : effective()) flat += k + '=' + v + '\n';
    return hex64(fnv1a64(flat));
  }
  const std::map<std::string, std::string>& values() const { return values_; }

  /// Every key with its effective value, in schema order.
  std::vector<std::pair<std::string, std::string>> effective() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : schema_) {
      const auto it = values_.find(s.name);
      out.emplace_back(s.name, it != values_.end() ? it->second : s.default_value);
    }
    return out;
  }

 private:
  static std::string strip_comment(const std::string& line) {
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') quoted = !quoted;
      if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
  }

  const KeySpec* find_spec(const std::string& key) const {
    for (const auto& s : schema_)
      if (s.name == key) return &s;
    return nullptr;
  }

  const KeySpec& spec(const std::string& key) const {
    const auto* s = find_spec(key);
    if (!s) throw ConfigError("unknown key '" + key + "'");
    return *s;
  }

  ConfigSchema schema_;
  std::map<std::string, std::string> values_;
  std::string text_;
};

/// One line per key: name, default and description.
inline std::string describe_schema(const ConfigSchema& schema) {
  std::ostringstream os;
  std::size_t w = 0;
  for (const auto& s : schema) w = std::max(w, s.name.size());
  for (const auto& s : schema) {
    os << "  " << s.name << std::string(w - s.name.size() + 2, ' ') << s.help;
    if (!s.default_value.empty()) os << " [default: " << s.default_value << "]";
    os << '\n';
  }
  return os.str();
}

}  // namespace vinebc
