#pragma once

// Flat "key = value" configuration text. '#' starts a comment; blank lines
// are ignored. Unknown keys are reported so typos do not pass silently.

#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace uavtraj {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class KeyValueFile {
 public:
  static KeyValueFile parse(std::istream& in);
  static KeyValueFile parse_text(const std::string& text);
  static KeyValueFile load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  // Each getter marks the key as consumed; the fallback is returned when absent.
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;

  /// Throws ConfigError listing keys that no getter has read.
  void reject_unknown() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  mutable std::set<std::string> consumed_;
};

/// 64-bit FNV-1a; stable identifier for serialized configurations.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace uavtraj
