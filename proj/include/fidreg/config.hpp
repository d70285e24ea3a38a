#pragma once

// "key = value" files with optional [section] headers. Sections may repeat;
// keys before the first header belong to an unnamed section. '#' and ';'
// start comments.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fidreg/geometry.hpp"

namespace fidreg {

class ConfigSection {
 public:
  explicit ConfigSection(std::string name = {}) : name_(std::move(name)) {}

  const std::string& name() const { return name_; }
  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;
  std::optional<std::string> find(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  // Getters throw ConfigError when the key is missing or malformed.
  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<double> get_doubles(const std::string& key) const;
  Vec3 get_vec3(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

 private:
  std::string name_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, const std::string& origin = "<config>");
  static ConfigFile parse_string(const std::string& text);
  static ConfigFile load(const std::filesystem::path& path);

  const std::vector<ConfigSection>& sections() const { return sections_; }
  std::vector<const ConfigSection*> all(const std::string& name) const;
  /// First section with this name, if any.
  const ConfigSection* first(const std::string& name) const;

  ConfigSection& add(const std::string& name);
  void write(std::ostream& out) const;

 private:
  std::vector<ConfigSection> sections_;
};

}  // namespace fidreg
