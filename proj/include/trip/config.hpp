#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "trip/metrics.hpp"

namespace trip {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Minimal INI-style config: [section] headers, key = value lines, '#'
// comments.  Lists are comma separated; shapes also accept 50x40x30.
// Every key must be consumed by a getter -- unknown keys are an error.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_text(const std::string& text, const std::string& origin = "<text>");

  bool has(const std::string& section, const std::string& key) const;

  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback);
  double get_double(const std::string& section, const std::string& key, double fallback);
  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback);
  std::uint64_t get_u64(const std::string& section, const std::string& key,
                        std::uint64_t fallback);
  bool get_bool(const std::string& section, const std::string& key, bool fallback);
  std::vector<std::string> get_strings(const std::string& section,
                                       const std::string& key);
  std::vector<double> get_doubles(const std::string& section, const std::string& key);
  std::vector<std::size_t> get_sizes(const std::string& section, const std::string& key);

  // throws ConfigError naming every key no getter ever asked for
  void ensure_consumed() const;

 private:
  std::string origin_;
  std::map<std::string, std::map<std::string, std::string>> sections_;
  std::set<std::pair<std::string, std::string>> consumed_;

  const std::string* find(const std::string& section, const std::string& key);
};

// Everything the CLI needs, assembled from one config file.
struct AppConfig {
  // [data]
  std::string source = "synth";  // synth | tensor | shards | events
  std::string tensor_path;
  std::vector<std::string> shard_paths;
  std::string events_path;
  SyntheticSpec synth;
  CoOccurrenceSpec events;

  // [federation] + [solver]
  FederationConfig fed;

  // [partition]
  double skew = -1.0;  // negative = even split

  // [sweep]
  SweepSpec sweep;

  // [output]
  std::string out_dir = ".";
  bool rmse_over_nonzeros = false;
};

AppConfig load_app_config(const std::string& path);
AppConfig parse_app_config(const std::string& text, const std::string& origin);

}  // namespace trip
