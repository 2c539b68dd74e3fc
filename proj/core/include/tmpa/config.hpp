#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace tmpa {

// Flat `key = value` configuration: one key per line, `#` comments. The key
// set is closed; unknown keys are rejected. Printing the resolved config and
// feeding it back reproduces the exact same configuration.
class KvConfig {
 public:
  static KvConfig defaults();

  void set(const std::string& key, const std::string& value);  // unknown key -> contract violation
  void merge_text(const std::string& text);
  void merge_file(const std::string& path);
  // "key=value" as passed on a command line.
  void set_kv(const std::string& assignment);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  void set_double(const std::string& key, double v);
  void set_int(const std::string& key, int64_t v);
  void set_bool(const std::string& key, bool v);

  // Round-trippable `key = value` lines in canonical order.
  std::string resolved_text() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  int index_of(const std::string& key) const;
};

// Canonical shortest-round-trip formatting for reals.
std::string format_double(double v);

}  // namespace tmpa
