#pragma once

// Plain-text key=value configuration files: '#' comments, blank lines ignored.

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>

namespace twga {

class Config {
 public:
  Config() = default;

  static Config load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("config: cannot read " + path);
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
      ++lineno;
      std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      auto eq = s.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: missing '=' at " + path + ":" + std::to_string(lineno));
      std::string key = trim(s.substr(0, eq));
      std::string value = trim(s.substr(eq + 1));
      if (key.empty()) throw std::runtime_error("config: empty key at " + path + ":" + std::to_string(lineno));
      c.values_[key] = value;
    }
    return c;
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoi(it->second);
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : static_cast<std::uint64_t>(std::stoull(it->second));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw std::runtime_error("config: '" + key + "' is not a boolean: " + it->second);
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace twga
