#include "fidreg/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fidreg/errors.hpp"

namespace fidreg {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_number(const std::string& key, const std::string& tok) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used == tok.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("key '" + key + "': '" + tok + "' is not a number");
}

}  // namespace

void ConfigSection::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

bool ConfigSection::has(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> ConfigSection::find(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

std::string ConfigSection::get_string(const std::string& key) const {
  auto v = find(key);
  if (!v) throw ConfigError("[" + name_ + "] missing key '" + key + "'");
  return *v;
}

double ConfigSection::get_double(const std::string& key) const {
  return parse_number(key, get_string(key));
}

int ConfigSection::get_int(const std::string& key) const {
  const double v = get_double(key);
  if (v != static_cast<int>(v)) throw ConfigError("key '" + key + "' must be an integer");
  return static_cast<int>(v);
}

bool ConfigSection::get_bool(const std::string& key) const {
  std::string v = get_string(key);
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<double> ConfigSection::get_doubles(const std::string& key) const {
  std::string s = get_string(key);
  std::replace(s.begin(), s.end(), ',', ' ');
  std::istringstream is(s);
  std::vector<double> out;
  for (std::string tok; is >> tok;) out.push_back(parse_number(key, tok));
  return out;
}

Vec3 ConfigSection::get_vec3(const std::string& key) const {
  const auto v = get_doubles(key);
  if (v.size() != 3) throw ConfigError("key '" + key + "' needs 3 values");
  return {v[0], v[1], v[2]};
}

std::string ConfigSection::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}
double ConfigSection::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
int ConfigSection::get_int(const std::string& key, int fallback) const {
  return has(key) ? get_int(key) : fallback;
}
bool ConfigSection::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

ConfigFile ConfigFile::parse(std::istream& in, const std::string& origin) {
  ConfigFile cfg;
  cfg.sections_.emplace_back("");
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto c = line.find_first_of("#;");
    if (c != std::string::npos) line.erase(c);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(line_no) + ": bad section header");
      cfg.sections_.emplace_back(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    cfg.sections_.back().set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::parse_string(const std::string& text) {
  std::istringstream is(text);
  return parse(is);
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse(in, path.string());
}

std::vector<const ConfigSection*> ConfigFile::all(const std::string& name) const {
  std::vector<const ConfigSection*> out;
  for (const auto& s : sections_) {
    if (s.name() == name) out.push_back(&s);
  }
  return out;
}

const ConfigSection* ConfigFile::first(const std::string& name) const {
  for (const auto& s : sections_) {
    if (s.name() == name) return &s;
  }
  return nullptr;
}

ConfigSection& ConfigFile::add(const std::string& name) { return sections_.emplace_back(name); }

void ConfigFile::write(std::ostream& out) const {
  bool first_section = true;
  for (const auto& s : sections_) {
    if (s.name().empty() && s.entries().empty()) continue;
    if (!first_section) out << '\n';
    first_section = false;
    if (!s.name().empty()) out << '[' << s.name() << "]\n";
    for (const auto& [k, v] : s.entries()) out << k << " = " << v << '\n';
  }
}

}  // namespace fidreg
