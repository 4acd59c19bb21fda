#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

namespace mvc {

using ConfigMap = std::map<std::string, std::string>;

/// Flat `key=value` text; `#` starts a comment, blank lines ignored.
ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);
std::string format_config(const ConfigMap& map);

/// Consumes typed values out of a ConfigMap. `finish()` rejects any key
/// that nobody asked for.
class ConfigReader {
 public:
  explicit ConfigReader(ConfigMap map) : map_(std::move(map)) {}

  int get_int(const std::string& key, int fallback);
  double get_double(const std::string& key, double fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::string get_string(const std::string& key, const std::string& fallback);
  bool has(const std::string& key) const { return map_.count(key) != 0; }

  void finish() const;

 private:
  const std::string* lookup(const std::string& key);
  ConfigMap map_;
  std::set<std::string> used_;
};

/// FNV-1a 64 of the canonical text form, as 16 hex digits.
std::string config_hash(const ConfigMap& map);

}  // namespace mvc

namespace mvc {
/// Shortest text that parses back to the same double.
std::string format_number(double v);
}  // namespace mvc
