#include "trip/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

namespace trip {

void SweepSpec::validate() const {
  fed.validate();
  if (methods.empty()) throw std::invalid_argument("no methods selected");
  for (const auto& m : methods)
    if (m != "trip" && m != "central" && m != "local")
      throw std::invalid_argument("unknown method: " + m);
  if (hospital_counts.empty()) throw std::invalid_argument("no hospital counts");
  if (skews.empty()) throw std::invalid_argument("no skews");
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (!tensor_path && instance.shape.empty())
    throw std::invalid_argument("sweep needs a tensor or a synthetic shape");
}

namespace {

double resolve_share(double skew, std::size_t k) {
  if (skew < 0.0) return 1.0 / static_cast<double>(k);
  return skew;
}

ExperimentResult base_result(const SweepSpec& spec, const std::string& method,
                             std::size_t k, double share, int repeat,
                             std::uint64_t seed) {
  ExperimentResult r;
  r.scenario = spec.scenario;
  r.method = method;
  r.k = k;
  r.skew = share;
  r.repeat = repeat;
  r.seed = seed;
  return r;
}

void fill_trace(ExperimentResult& r, const Trace& trace) {
  r.converged = trace.converged;
  r.iterations = trace.iterations.size();
  for (const auto& it : trace.iterations) r.rmse_trace.push_back(it.rmse);
  r.rmse = trace.final_rmse();
}

// alignment pass used by the local baseline when the pipeline asks for it
std::vector<SparseTensor> align_and_reindex(
    const std::vector<SparseTensor>& shards, const FederationConfig& cfg,
    AlignmentOutcome& outcome) {
  const std::size_t n_modes = shards.front().order() - 1;
  std::vector<std::vector<std::vector<std::uint64_t>>> vocabs(shards.size());
  for (std::size_t h = 0; h < shards.size(); ++h)
    for (std::size_t f = 0; f < n_modes; ++f)
      vocabs[h].push_back(observed_vocabulary(shards[h], f + 1));
  outcome = run_alignment(vocabs, cfg);
  std::vector<SparseTensor> out;
  for (std::size_t h = 0; h < shards.size(); ++h) {
    SparseTensor re = shards[h];
    for (std::size_t f = 0; f < n_modes; ++f)
      re = reindex_mode(re, f + 1, outcome.per_hospital[h][f].global_index,
                        outcome.per_hospital[h][f].global_size);
    out.push_back(std::move(re));
  }
  return out;
}

}  // namespace

std::vector<ExperimentResult> run_sweep(const SweepSpec& spec) {
  spec.validate();
  std::vector<ExperimentResult> results;

  std::optional<SparseTensor> fixed;
  if (spec.tensor_path) fixed = read_tensor(*spec.tensor_path);

  // the per-repeat tensor is method-independent; build each only once
  std::map<int, SparseTensor> tensors;
  auto tensor_for = [&](int repeat) -> const SparseTensor& {
    auto it = tensors.find(repeat);
    if (it != tensors.end()) return it->second;
    if (fixed) return *fixed;
    SyntheticSpec inst = spec.instance;
    inst.seed = spec.base_seed + static_cast<std::uint64_t>(repeat);
    return tensors.emplace(repeat, synthesize_tensor(inst).tensor).first->second;
  };

  // central depends only on the repeat, not on (k, skew); memoize
  std::map<int, ExperimentResult> central_cache;

  for (const auto& method : spec.methods) {
    for (std::size_t k : spec.hospital_counts) {
      for (double skew : spec.skews) {
        const double share = resolve_share(skew, k);
        for (int rep = 0; rep < spec.repeats; ++rep) {
          const std::uint64_t seed = spec.base_seed + static_cast<std::uint64_t>(rep);
          const SparseTensor& tensor = tensor_for(rep);

          FederationConfig fed = spec.fed;
          fed.k = k;
          fed.trip.seed = seed;

          ExperimentResult r = base_result(spec, method, k, share, rep, seed);
          if (method == "central") {
            auto hit = central_cache.find(rep);
            if (hit == central_cache.end()) {
              CentralResult c = run_central(tensor, fed);
              ExperimentResult cr = r;
              fill_trace(cr, c.trace);
              cr.timing = c.timing;
              hit = central_cache.emplace(rep, std::move(cr)).first;
            }
            r.rmse = hit->second.rmse;
            r.rmse_trace = hit->second.rmse_trace;
            r.converged = hit->second.converged;
            r.iterations = hit->second.iterations;
            r.timing = hit->second.timing;
          } else {
            const PartitionPlan plan =
                make_partition_plan(tensor.dim(0), k, share, seed);
            const std::vector<SparseTensor> shards =
                partition_patients(tensor, plan);
            if (method == "trip") {
              TripResult t = fed.align ? run_trip_with_alignment(shards, fed)
                                       : run_trip(shards, fed);
              fill_trace(r, t.trace);
              r.timing = t.timing;
            } else {  // local
              LocalResult l;
              if (fed.align) {
                AlignmentOutcome outcome;
                const auto aligned = align_and_reindex(shards, fed, outcome);
                l = run_local(aligned, fed);
                l.timing.align_bytes_to_server = outcome.bytes.to_server;
                l.timing.align_bytes_to_hospitals = outcome.bytes.to_hospitals;
                l.timing.alignment_compute_seconds = outcome.compute_seconds;
                l.timing.alignment_seconds =
                    outcome.compute_seconds +
                    static_cast<double>(outcome.bytes.to_server +
                                        outcome.bytes.to_hospitals) /
                        fed.link_bytes_per_sec;
              } else {
                l = run_local(shards, fed);
              }
              fill_trace(r, l.trace);
              r.timing = l.timing;
            }
          }
          results.push_back(std::move(r));
        }
      }
    }
  }
  return results;
}

std::vector<AggregateRow> aggregate(const std::vector<ExperimentResult>& results) {
  using Key = std::tuple<std::string, std::string, std::size_t, double>;
  std::map<Key, std::vector<const ExperimentResult*>> groups;
  for (const auto& r : results)
    groups[{r.scenario, r.method, r.k, r.skew}].push_back(&r);

  std::vector<AggregateRow> rows;
  for (const auto& [key, rs] : groups) {
    AggregateRow row;
    row.scenario = std::get<0>(key);
    row.method = std::get<1>(key);
    row.k = std::get<2>(key);
    row.skew = std::get<3>(key);
    row.runs = rs.size();
    double sum = 0.0;
    for (const auto* r : rs) {
      sum += r->rmse;
      row.comp_s += r->timing.computation_seconds;
      row.comm_s += r->timing.communication_seconds;
      row.align_s += r->timing.alignment_seconds;
      row.total_s += r->timing.total_seconds();
    }
    const double n = static_cast<double>(rs.size());
    row.rmse_mean = sum / n;
    row.comp_s /= n;
    row.comm_s /= n;
    row.align_s /= n;
    row.total_s /= n;
    if (rs.size() > 1) {
      double ss = 0.0;
      for (const auto* r : rs) {
        const double d = r->rmse - row.rmse_mean;
        ss += d * d;
      }
      row.rmse_sd = std::sqrt(ss / (n - 1.0));
    }
    rows.push_back(std::move(row));
  }
  return rows;  // std::map iteration already sorts by the key
}

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

void write_csv(const std::vector<AggregateRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write csv: " + path);
  out << "scenario,method,k,skew,rmse_mean,rmse_sd,comp_s,comm_s,align_s,total_s\n";
  for (const auto& r : rows) {
    out << r.scenario << ',' << r.method << ',' << r.k << ',' << fmt(r.skew)
        << ',' << fmt(r.rmse_mean) << ',' << fmt(r.rmse_sd) << ','
        << fmt(r.comp_s) << ',' << fmt(r.comm_s) << ',' << fmt(r.align_s)
        << ',' << fmt(r.total_s) << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<AggregateRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path);
  if (line != "scenario,method,k,skew,rmse_mean,rmse_sd,comp_s,comm_s,align_s,total_s")
    throw std::runtime_error("unexpected csv header in " + path);
  std::vector<AggregateRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ls, field, ',')) fields.push_back(field);
    if (fields.size() != 10)
      throw std::runtime_error("malformed csv row in " + path);
    AggregateRow r;
    r.scenario = fields[0];
    r.method = fields[1];
    r.k = static_cast<std::size_t>(std::stoull(fields[2]));
    r.skew = std::stod(fields[3]);
    r.rmse_mean = std::stod(fields[4]);
    r.rmse_sd = std::stod(fields[5]);
    r.comp_s = std::stod(fields[6]);
    r.comm_s = std::stod(fields[7]);
    r.align_s = std::stod(fields[8]);
    r.total_s = std::stod(fields[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_json(const std::vector<ExperimentResult>& results,
                const std::vector<AggregateRow>& rows, const std::string& path) {
  nlohmann::json j;
  j["aggregates"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["aggregates"].push_back({{"scenario", r.scenario},
                               {"method", r.method},
                               {"k", r.k},
                               {"skew", r.skew},
                               {"rmse_mean", r.rmse_mean},
                               {"rmse_sd", r.rmse_sd},
                               {"comp_s", r.comp_s},
                               {"comm_s", r.comm_s},
                               {"align_s", r.align_s},
                               {"total_s", r.total_s},
                               {"runs", r.runs}});
  }
  j["runs"] = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json t{{"computation_seconds", r.timing.computation_seconds},
                     {"communication_seconds", r.timing.communication_seconds},
                     {"alignment_seconds", r.timing.alignment_seconds},
                     {"total_seconds", r.timing.total_seconds()},
                     {"bytes_to_server", r.timing.bytes_to_server},
                     {"bytes_to_hospitals", r.timing.bytes_to_hospitals},
                     {"align_bytes_to_server", r.timing.align_bytes_to_server},
                     {"align_bytes_to_hospitals", r.timing.align_bytes_to_hospitals}};
    j["runs"].push_back({{"scenario", r.scenario},
                         {"method", r.method},
                         {"k", r.k},
                         {"skew", r.skew},
                         {"repeat", r.repeat},
                         {"seed", r.seed},
                         {"rmse", r.rmse},
                         {"converged", r.converged},
                         {"iterations", r.iterations},
                         {"rmse_trace", r.rmse_trace},
                         {"timing", t}});
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write json: " + path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace trip
