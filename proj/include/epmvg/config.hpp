#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "epmvg/errors.hpp"

namespace epmvg::numcore {

// Flat `key = value` config. One pair per line, '#' starts a comment,
// blank lines ignored, duplicate keys rejected. Consumers pull values with
// typed getters (each marks its key as recognized) and then call
// reject_unknown_keys(), which fails on any key nobody asked for — so a
// typo in a config file cannot silently fall back to a default.
class Config {
 public:
  Config() = default;
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text, const std::string& origin = "<string>");

  // CLI-flag override; replaces any file value and marks nothing.
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // ConfigError naming every key that was never requested by a getter.
  void reject_unknown_keys() const;

  std::vector<std::pair<std::string, std::string>> entries() const;

 private:
  const std::string* find(const std::string& key) const;

  struct Entry {
    std::string key, value;
    mutable bool seen = false;
  };
  std::vector<Entry> entries_;
  std::string origin_;
};

}  // namespace epmvg::numcore
