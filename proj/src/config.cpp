#include "epmvg/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace epmvg::numcore {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str(), path);
}

Config Config::from_string(const std::string& text,
                           const std::string& origin) {
  Config c;
  c.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": empty key");
    if (c.find(key) != nullptr)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    c.entries_.push_back({key, value, false});
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  for (Entry& e : entries_) {
    if (e.key == key) {
      e.value = value;
      return;
    }
  }
  entries_.push_back({key, value, false});
}

const std::string* Config::find(const std::string& key) const {
  for (const Entry& e : entries_) {
    if (e.key == key) {
      e.seen = true;
      return &e.value;
    }
  }
  return nullptr;
}

bool Config::has(const std::string& key) const { return find(key) != nullptr; }

std::string Config::get_string(const std::string& key,
                               const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

double Config::get_double(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing junk");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + *v +
                      "' is not a number");
  }
}

std::int64_t Config::get_int(const std::string& key,
                             std::int64_t fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const long long i = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument("trailing junk");
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + *v +
                      "' is not an integer");
  }
}

std::uint64_t Config::get_u64(const std::string& key,
                              std::uint64_t fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const unsigned long long i = std::stoull(*v, &used);
    if (used != v->size() || (!v->empty() && v->front() == '-'))
      throw std::invalid_argument("not unsigned");
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': '" + *v +
                      "' is not a non-negative integer");
  }
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1") return true;
  if (*v == "false" || *v == "0") return false;
  throw ConfigError("config key '" + key + "': '" + *v +
                    "' is not a boolean (true/false/1/0)");
}

void Config::reject_unknown_keys() const {
  std::string unknown;
  for (const Entry& e : entries_) {
    if (!e.seen) {
      if (!unknown.empty()) unknown += ", ";
      unknown += "'" + e.key + "'";
    }
  }
  if (!unknown.empty())
    throw ConfigError("unknown config key(s) in " + origin_ + ": " + unknown);
}

std::vector<std::pair<std::string, std::string>> Config::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(entries_.size());
  for (const Entry& e : entries_) out.emplace_back(e.key, e.value);
  return out;
}

}  // namespace epmvg::numcore
