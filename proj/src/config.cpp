#include "trip/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace trip {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

ConfigFile ConfigFile::parse_text(const std::string& text, const std::string& origin) {
  ConfigFile cf;
  cf.origin_ = origin;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) +
                          ": empty section name");
      cf.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": key outside any [section]");
    auto [it, inserted] = cf.sections_[section].emplace(key, value);
    (void)it;
    if (!inserted)
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
  }
  return cf;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str(), path);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

const std::string* ConfigFile::find(const std::string& section,
                                    const std::string& key) {
  auto s = sections_.find(section);
  if (s == sections_.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  consumed_.insert({section, key});
  return &k->second;
}

std::string ConfigFile::get_string(const std::string& section,
                                   const std::string& key,
                                   const std::string& fallback) {
  const std::string* v = find(section, key);
  return v ? *v : fallback;
}

double ConfigFile::get_double(const std::string& section, const std::string& key,
                              double fallback) {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const double d = std::stod(*v, &used);
    if (used != v->size()) throw std::invalid_argument("");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": " + section + "." + key +
                      " is not a number: " + *v);
  }
}

std::int64_t ConfigFile::get_int(const std::string& section,
                                 const std::string& key, std::int64_t fallback) {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const std::int64_t i = std::stoll(*v, &used);
    if (used != v->size()) throw std::invalid_argument("");
    return i;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": " + section + "." + key +
                      " is not an integer: " + *v);
  }
}

std::uint64_t ConfigFile::get_u64(const std::string& section,
                                  const std::string& key, std::uint64_t fallback) {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  try {
    std::size_t used = 0;
    const std::uint64_t i = std::stoull(*v, &used);
    if (used != v->size()) throw std::invalid_argument("");
    return i;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": " + section + "." + key +
                      " is not an unsigned integer: " + *v);
  }
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key,
                          bool fallback) {
  const std::string* v = find(section, key);
  if (!v) return fallback;
  std::string s = *v;
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "yes" || s == "on" || s == "1") return true;
  if (s == "false" || s == "no" || s == "off" || s == "0") return false;
  throw ConfigError(origin_ + ": " + section + "." + key +
                    " is not a boolean: " + *v);
}

std::vector<std::string> ConfigFile::get_strings(const std::string& section,
                                                 const std::string& key) {
  const std::string* v = find(section, key);
  return v ? split_list(*v) : std::vector<std::string>{};
}

std::vector<double> ConfigFile::get_doubles(const std::string& section,
                                            const std::string& key) {
  std::vector<double> out;
  for (const auto& s : get_strings(section, key)) {
    if (s == "even") {
      out.push_back(-1.0);
      continue;
    }
    try {
      out.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": " + section + "." + key +
                        " has a non-numeric item: " + s);
    }
  }
  return out;
}

std::vector<std::size_t> ConfigFile::get_sizes(const std::string& section,
                                               const std::string& key) {
  const std::string* v = find(section, key);
  if (!v) return {};
  std::string s = *v;
  std::replace(s.begin(), s.end(), 'x', ',');
  std::vector<std::size_t> out;
  for (const auto& item : split_list(s)) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(item)));
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": " + section + "." + key +
                        " has a non-integer item: " + item);
    }
  }
  return out;
}

void ConfigFile::ensure_consumed() const {
  std::vector<std::string> unknown;
  for (const auto& [section, kvs] : sections_)
    for (const auto& [key, value] : kvs) {
      (void)value;
      if (!consumed_.count({section, key}))
        unknown.push_back(section + "." + key);
    }
  if (!unknown.empty()) {
    std::string msg = origin_ + ": unknown configuration keys:";
    for (const auto& u : unknown) msg += " " + u;
    throw ConfigError(msg);
  }
}

namespace {

FederationConfig::Transport parse_transport(const std::string& s) {
  if (s == "in_process") return FederationConfig::Transport::in_process;
  if (s == "tcp") return FederationConfig::Transport::tcp;
  throw ConfigError("unknown transport: " + s);
}

FederationConfig::TimeMode parse_time_mode(const std::string& s) {
  if (s == "wall") return FederationConfig::TimeMode::wall;
  if (s == "modeled") return FederationConfig::TimeMode::modeled;
  throw ConfigError("unknown time mode: " + s);
}

}  // namespace

AppConfig parse_app_config(const std::string& text, const std::string& origin) {
  ConfigFile cf = ConfigFile::parse_text(text, origin);
  AppConfig app;

  app.source = cf.get_string("data", "source", app.source);
  app.tensor_path = cf.get_string("data", "tensor", "");
  app.shard_paths = cf.get_strings("data", "shards");
  app.events_path = cf.get_string("data", "events", "");
  app.synth.shape = cf.get_sizes("data", "shape");
  app.synth.rank = static_cast<int>(cf.get_int("data", "gt_rank", app.synth.rank));
  app.synth.noise_sd = cf.get_double("data", "noise_sd", app.synth.noise_sd);
  app.synth.cap = cf.get_double("data", "cap", app.synth.cap);
  app.synth.quantize = cf.get_bool("data", "quantize", app.synth.quantize);
  app.events.kind_a = cf.get_string("data", "kind_a", app.events.kind_a);
  app.events.kind_b = cf.get_string("data", "kind_b", app.events.kind_b);
  app.events.window_seconds =
      cf.get_double("data", "window_seconds", app.events.window_seconds);
  app.events.cap = cf.get_double("data", "event_cap", app.events.cap);

  FederationConfig& fed = app.fed;
  fed.trip.rank = static_cast<int>(cf.get_int("solver", "rank", fed.trip.rank));
  fed.trip.lambda = cf.get_double("solver", "lambda", fed.trip.lambda);
  fed.trip.omega = cf.get_double("solver", "omega", fed.trip.omega);
  fed.trip.mu = cf.get_double("solver", "mu", fed.trip.mu);
  fed.trip.max_iter = static_cast<int>(cf.get_int("solver", "max_iter", fed.trip.max_iter));
  fed.trip.tol = cf.get_double("solver", "tol", fed.trip.tol);
  fed.trip.ridge = cf.get_double("solver", "ridge", fed.trip.ridge);
  fed.trip.seed = cf.get_u64("solver", "seed", fed.trip.seed);

  fed.k = static_cast<std::size_t>(cf.get_u64("federation", "k", fed.k));
  fed.transport = parse_transport(
      cf.get_string("federation", "transport", "in_process"));
  fed.link_bytes_per_sec =
      cf.get_double("federation", "link_bytes_per_sec", fed.link_bytes_per_sec);
  fed.time_mode =
      parse_time_mode(cf.get_string("federation", "time_mode", "wall"));
  fed.modeled_work_per_sec = cf.get_double("federation", "modeled_work_per_sec",
                                           fed.modeled_work_per_sec);
  fed.align = cf.get_bool("federation", "align", fed.align);
  fed.align_retries = static_cast<int>(
      cf.get_int("federation", "align_retries", fed.align_retries));
  fed.feature_dims = cf.get_sizes("federation", "feature_dims");
  fed.feature_modes = static_cast<std::size_t>(
      cf.get_u64("federation", "feature_modes", fed.feature_modes));
  fed.total_patients = static_cast<std::size_t>(
      cf.get_u64("federation", "total_patients", fed.total_patients));
  fed.host = cf.get_string("federation", "host", fed.host);
  fed.port = static_cast<std::uint16_t>(cf.get_u64("federation", "port", fed.port));
  fed.hospital_id = static_cast<std::uint16_t>(
      cf.get_u64("federation", "hospital_id", fed.hospital_id));

  const std::string skew = cf.get_string("partition", "skew", "even");
  app.skew = skew == "even" ? -1.0 : std::stod(skew);

  app.sweep.scenario = cf.get_string("sweep", "scenario", app.sweep.scenario);
  if (cf.has("sweep", "methods")) app.sweep.methods = cf.get_strings("sweep", "methods");
  if (cf.has("sweep", "hospital_counts"))
    app.sweep.hospital_counts = cf.get_sizes("sweep", "hospital_counts");
  if (cf.has("sweep", "skews")) app.sweep.skews = cf.get_doubles("sweep", "skews");
  app.sweep.repeats = static_cast<int>(cf.get_int("sweep", "repeats", app.sweep.repeats));
  app.sweep.base_seed = cf.get_u64("sweep", "base_seed", app.sweep.base_seed);
  app.sweep.instance = app.synth;
  if (!app.tensor_path.empty() && app.source == "tensor")
    app.sweep.tensor_path = app.tensor_path;
  app.sweep.fed = fed;

  app.out_dir = cf.get_string("output", "dir", app.out_dir);
  app.rmse_over_nonzeros =
      cf.get_bool("output", "rmse_over_nonzeros", app.rmse_over_nonzeros);

  cf.ensure_consumed();
  return app;
}

AppConfig load_app_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_app_config(buf.str(), path);
}

}  // namespace trip
