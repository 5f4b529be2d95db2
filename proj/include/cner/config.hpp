#pragma once

#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cner/container.hpp"

namespace cner {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct KeySpec {
  std::string key;
  std::string default_value;  // empty means unset
  std::string help;
};

/// Key-value run configuration over a closed key set. Files hold
/// `key = value` lines; lines starting with '#' and blank lines are ignored.
/// Later merges override earlier ones.
class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(std::vector<KeySpec> schema) : schema_(std::move(schema)) {
    for (const auto& k : schema_) {
      values_[k.key] = k.default_value;
      origin_[k.key] = "default";
    }
  }

  const std::vector<KeySpec>& schema() const { return schema_; }

  void set(const std::string& key, const std::string& value, const std::string& origin) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "' (from " + origin + ")");
    values_[key] = value;
    origin_[key] = origin;
  }

  void merge_text(std::string_view text, const std::string& origin) {
    std::size_t pos = 0;
    std::size_t line_no = 0;
    while (pos < text.size()) {
      std::size_t eol = text.find('\n', pos);
      if (eol == std::string_view::npos) eol = text.size();
      const std::string line = trim(text.substr(pos, eol - pos));
      pos = eol + 1;
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      const std::size_t eq = line.find('=');
      const std::string where = origin + ":" + std::to_string(line_no);
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
      const std::string key = trim(std::string_view(line).substr(0, eq));
      if (key.empty()) throw ConfigError(where + ": empty key");
      set(key, trim(std::string_view(line).substr(eq + 1)), where);
    }
  }

  void merge_file(const std::string& path) {
    std::string text;
    try {
      text = read_file_bytes(path);
    } catch (const std::exception&) {
      throw ConfigError("cannot read config file '" + path + "'");
    }
    merge_text(text, path);
  }

  /// `--key value` pairs.
  void merge_flags(const std::vector<std::string>& args) {
    for (std::size_t i = 0; i < args.size(); ++i) {
      const std::string& a = args[i];
      if (a.size() < 3 || a.compare(0, 2, "--") != 0) throw ConfigError("unexpected argument '" + a + "'");
      std::string key = a.substr(2);
      std::string value;
      const std::size_t eq = key.find('=');
      if (eq != std::string::npos) {
        value = key.substr(eq + 1);
        key.resize(eq);
      } else {
        if (i + 1 >= args.size()) throw ConfigError("flag '" + a + "' needs a value");
        value = args[++i];
      }
      set(key, value, "command line");
    }
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw std::logic_error("config key '" + key + "' not in schema");
    return it->second;
  }

  bool has(const std::string& key) const { return !get(key).empty(); }

  const std::string& require(const std::string& key) const {
    if (!has(key)) throw ConfigError("config key '" + key + "' is required");
    return get(key);
  }

  long long get_int(const std::string& key) const {
    const std::string& v = require(key);
    std::size_t used = 0;
    long long out = 0;
    try {
      out = std::stoll(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("config key '" + key + "' needs an integer, got '" + v + "'");
    return out;
  }

  std::size_t get_size(const std::string& key) const {
    const long long v = get_int(key);
    if (v <= 0) throw ConfigError("config key '" + key + "' must be positive");
    return static_cast<std::size_t>(v);
  }

  double get_double(const std::string& key) const {
    const std::string& v = require(key);
    std::size_t used = 0;
    double out = 0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ConfigError("config key '" + key + "' needs a number, got '" + v + "'");
    return out;
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = require(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' needs true or false, got '" + v + "'");
  }

  /// `config key = value` lines in key order.
  std::string render() const {
    std::string out;
    for (const auto& [k, v] : values_) out += "config " + k + " = " + v + "\n";
    return out;
  }

 private:
  static std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return std::string(s.substr(b, e - b));
  }

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> origin_;
};

}  // namespace cner
