// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

namespace gscnn {

// Flat `key = value` text with [section] headers; keys are addressed as
// "section.key". Unsectioned keys keep their bare name.
class Config {
 public:
  static Config parse_text(const std::string& text);
  static Config parse_file(const std::string& path);

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  // "section.key=value" as passed to --set
  void set_kv(const std::string& assignment);

  bool contains(const std::string& key) const { return kv_.count(key) != 0; }

  std::string get_str(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  uint64_t get_u64(const std::string& key, uint64_t def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const;
  std::vector<double> get_double_list(const std::string& key, std::vector<double> def) const;

  // Canonical serialized form (sections and keys sorted).
  std::string to_text() const;

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace gscnn
