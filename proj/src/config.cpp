// SPDX-License-Identifier: Apache-2.0
#include "gscnn/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gscnn {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

Config Config::parse_text(const std::string& text) {
  Config c;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::runtime_error("config line " + std::to_string(lineno) +
                                 ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) +
                               ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    c.kv_[section.empty() ? key : section + "." + key] = value;
  }
  return c;
}

Config Config::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return parse_text(os.str());
}

void Config::set_kv(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::runtime_error("--set expects key=value, got '" + assignment + "'");
  kv_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

std::string Config::get_str(const std::string& key, const std::string& def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : it->second;
}

int Config::get_int(const std::string& key, int def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : std::stoi(it->second);
}

uint64_t Config::get_u64(const std::string& key, uint64_t def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : std::stoull(it->second);
}

double Config::get_double(const std::string& key, double def) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? def : std::stod(it->second);
}

bool Config::get_bool(const std::string& key, bool def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw std::runtime_error("config key '" + key + "': not a boolean: '" + v + "'");
}

std::vector<int> Config::get_int_list(const std::string& key, std::vector<int> def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::vector<int> out;
  std::istringstream in(it->second);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(trim(tok)));
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key,
                                            std::vector<double> def) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return def;
  std::vector<double> out;
  std::istringstream in(it->second);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stod(trim(tok)));
  return out;
}

std::string Config::to_text() const {
  // unsectioned keys first so they cannot be swallowed by a section header
  std::ostringstream os;
  for (const auto& [key, value] : kv_)
    if (key.find('.') == std::string::npos) os << key << " = " << value << "\n";
  std::string current_section;
  for (const auto& [key, value] : kv_) {
    auto dot = key.find('.');
    if (dot == std::string::npos) continue;
    std::string section = key.substr(0, dot);
    if (section != current_section) {
      os << "\n[" << section << "]\n";
      current_section = section;
    }
    os << key.substr(dot + 1) << " = " << value << "\n";
  }
  return os.str();
}

}  // namespace gscnn
