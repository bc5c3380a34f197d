#include "spe/config.hpp"

#include <cstdlib>
#include <sstream>

#include <nlohmann/json.hpp>

#include "spe/serialize.hpp"

namespace spe {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

void flatten_json(const nlohmann::json& j, const std::string& prefix,
                  std::map<std::string, std::string>& out) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      flatten_json(value, prefix.empty() ? key : prefix + "." + key, out);
    }
  } else if (j.is_string()) {
    out[prefix] = j.get<std::string>();
  } else if (j.is_array()) {
    std::string list;
    for (const auto& item : j) {
      if (!list.empty()) list += ",";
      list += item.is_string() ? item.get<std::string>() : item.dump();
    }
    out[prefix] = list;
  } else {
    out[prefix] = j.dump();
  }
}

}  // namespace

Config Config::parse_file(const std::filesystem::path& path) {
  return parse_text(read_file(path), path.string());
}

Config Config::parse_text(const std::string& text, const std::string& origin) {
  Config cfg;
  // JSON alternative: the first meaningful character decides
  const size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      flatten_json(nlohmann::json::parse(text), "", cfg.values_);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(origin + ": invalid JSON config: " + e.what());
    }
    return cfg;
  }

  std::istringstream in(text);
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    check_data(eq != std::string::npos,
               origin + ":" + std::to_string(line_no) + ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    check_data(!key.empty(), origin + ":" + std::to_string(line_no) + ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string Config::require_string(const std::string& key) const {
  auto it = values_.find(key);
  check_data(it != values_.end(), "config: missing required key `" + key + "`");
  return it->second;
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(it->second, &pos);
    check_data(pos == it->second.size(), "");
    return v;
  } catch (...) {
    throw DataError("config: key `" + key + "` is not an integer: " + it->second);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    check_data(pos == it->second.size(), "");
    return v;
  } catch (...) {
    throw DataError("config: key `" + key + "` is not a number: " + it->second);
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw DataError("config: key `" + key + "` is not a boolean: " + it->second);
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            const std::vector<double>& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::vector<double> out;
  std::istringstream in(it->second);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      out.push_back(std::stod(trim(item)));
    } catch (...) {
      throw DataError("config: key `" + key + "` is not a number list: " + it->second);
    }
  }
  check_data(!out.empty(), "config: key `" + key + "` is empty");
  return out;
}

std::string Config::resolved_text() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) out << key << " = " << value << "\n";
  return out.str();
}

std::string Config::hash() const { return to_hex(fnv1a(resolved_text())); }

}  // namespace spe
