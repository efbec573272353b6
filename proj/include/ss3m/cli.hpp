#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace ss3m {

// Flat dotted-key configuration, e.g. `model.alpha = 0.1`. Only keys listed by
// config_keys() are accepted.
class RunConfig {
 public:
  RunConfig();

  // Reads `key = value` lines; `#` starts a comment. Throws ConfigError on
  // unknown or repeated keys.
  void load_text(const std::string& text, const std::string& origin = "config");
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;
  const std::string& get(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  // Every key with a value, sorted, one `key = value` per line.
  std::string render() const;

 private:
  std::map<std::string, std::string> values_;
};

struct ConfigKey {
  const char* name;
  // nullptr: no default; commands that need the key refuse to run without it.
  const char* default_value;
  const char* help;
};

const std::vector<ConfigKey>& config_keys();

// 64-bit FNV-1a, hex encoded.
std::string content_hash(const std::string& bytes);

// Entry point of the ss3m tool. Exit codes: 0 success, 1 usage or config
// error, 2 data error, 3 numerical error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ss3m
