#include "mediumvc/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mediumvc/error.hpp"

namespace mvc {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCategory::Config, "line " + std::to_string(lineno) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) fail(ErrorCategory::Config, "line " + std::to_string(lineno) + ": empty key");
    if (map.count(key)) fail(ErrorCategory::Config, "duplicate key " + key);
    map[key] = trim(line.substr(eq + 1));
  }
  return map;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCategory::Config, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string format_config(const ConfigMap& map) {
  std::string out;
  for (const auto& [k, v] : map) out += k + "=" + v + "\n";
  return out;
}

const std::string* ConfigReader::lookup(const std::string& key) {
  used_.insert(key);
  auto it = map_.find(key);
  return it == map_.end() ? nullptr : &it->second;
}

int ConfigReader::get_int(const std::string& key, int fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  int out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size())
    fail(ErrorCategory::Config, "key " + key + ": not an integer: " + *v);
  return out;
}

double ConfigReader::get_double(const std::string& key, double fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double out = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument(*v);
    return out;
  } catch (const std::exception&) {
    fail(ErrorCategory::Config, "key " + key + ": not a number: " + *v);
  }
}

bool ConfigReader::get_bool(const std::string& key, bool fallback) {
  const auto* v = lookup(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  fail(ErrorCategory::Config, "key " + key + ": not a boolean: " + *v);
}

std::string ConfigReader::get_string(const std::string& key, const std::string& fallback) {
  const auto* v = lookup(key);
  return v ? *v : fallback;
}

void ConfigReader::finish() const {
  for (const auto& [k, v] : map_)
    if (!used_.count(k)) fail(ErrorCategory::Config, "unknown config key: " + k);
}

std::string config_hash(const ConfigMap& map) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : format_config(map)) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace mvc

namespace mvc {

std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace mvc
