#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "modeplan/util.hpp"

namespace modeplan {

// Plain-text config: `[section]` headers, `key = value` lines, `#` or `;`
// comments. Values are kept as strings; typed access validates on read.
// Lookup keys are "section.key". Parsing keeps insertion order so a config
// can be round-tripped for logging.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& text) {
    ConfigFile cfg;
    std::string section;
    int line_no = 0;
    for (const std::string& raw : split(text, '\n')) {
      ++line_no;
      std::string line = trim(raw);
      size_t cut = line.find_first_of("#;");
      if (cut != std::string::npos) line = trim(line.substr(0, cut));
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw std::runtime_error("config: line " + std::to_string(line_no) +
                                   ": unterminated section header");
        section = trim(line.substr(1, line.size() - 2));
        if (section.empty())
          throw std::runtime_error("config: line " + std::to_string(line_no) +
                                   ": empty section name");
        continue;
      }
      size_t eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: line " + std::to_string(line_no) +
                                 ": expected key = value");
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (key.empty())
        throw std::runtime_error("config: line " + std::to_string(line_no) +
                                 ": empty key");
      if (section.empty())
        throw std::runtime_error("config: line " + std::to_string(line_no) +
                                 ": key outside any [section]");
      cfg.set(section + "." + key, value);
    }
    return cfg;
  }

  static ConfigFile load(const std::string& path) {
    return parse(read_text_file(path));
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) order_.push_back(key);
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  const std::vector<std::string>& keys() const { return order_; }

  std::string get_string(const std::string& key,
                         const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(it->second, &used);
    } catch (const std::exception&) {
      throw bad_value(key, it->second, "integer");
    }
    if (used != it->second.size()) throw bad_value(key, it->second, "integer");
    return v;
  }

  uint64_t get_u64(const std::string& key, uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    size_t used = 0;
    uint64_t v = 0;
    try {
      v = std::stoull(it->second, &used);
    } catch (const std::exception&) {
      throw bad_value(key, it->second, "unsigned integer");
    }
    if (used != it->second.size())
      throw bad_value(key, it->second, "unsigned integer");
    return v;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(it->second, &used);
    } catch (const std::exception&) {
      throw bad_value(key, it->second, "number");
    }
    if (used != it->second.size()) throw bad_value(key, it->second, "number");
    return v;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw bad_value(key, v, "boolean");
  }

  // Catches typos: every key in the file must be one the caller understands.
  void require_known(const std::vector<std::string>& known) const {
    for (const std::string& key : order_) {
      bool ok = false;
      for (const std::string& k : known)
        if (k == key) ok = true;
      if (!ok) throw std::runtime_error("config: unknown key '" + key + "'");
    }
  }

 private:
  static std::runtime_error bad_value(const std::string& key,
                                      const std::string& value,
                                      const char* want) {
    return std::runtime_error("config: key '" + key + "': '" + value +
                              "' is not a valid " + want);
  }

  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
};

}  // namespace modeplan
