#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spe/common.hpp"

namespace spe {

// Run configuration: flat dotted keys with string values. The native format
// is `key.subkey = value` lines with `#` comments; a JSON object (possibly
// nested) is accepted as an alternative and flattened into dotted keys.
class Config {
 public:
  static Config parse_file(const std::filesystem::path& path);
  static Config parse_text(const std::string& text, const std::string& origin = "<config>");

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // "a,b,c" -> {a, b, c}
  std::vector<double> get_double_list(const std::string& key, const std::vector<double>& fallback) const;

  // Sorted key = value lines; written next to outputs so a run can be
  // reproduced from the echo alone.
  std::string resolved_text() const;
  std::string hash() const;  // over resolved_text

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace spe
