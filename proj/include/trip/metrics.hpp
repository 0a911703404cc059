#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trip/baselines.hpp"
#include "trip/data.hpp"

namespace trip {

struct SweepSpec {
  std::string scenario = "synthetic";
  std::vector<std::string> methods = {"trip", "central", "local"};
  std::vector<std::size_t> hospital_counts = {3};
  std::vector<double> skews = {-1.0};  // negative means an even split
  int repeats = 10;
  std::uint64_t base_seed = 1;

  SyntheticSpec instance;                  // per-repeat seed is derived
  std::optional<std::string> tensor_path;  // fixed input instead of synthesis

  FederationConfig fed;  // solver, transport, link rate, alignment, timing

  void validate() const;
};

struct ExperimentResult {
  std::string scenario;
  std::string method;
  std::size_t k = 1;
  double skew = 1.0;  // hospital 0's resolved share
  int repeat = 0;
  std::uint64_t seed = 0;
  double rmse = 0.0;
  std::vector<double> rmse_trace;
  bool converged = false;
  std::size_t iterations = 0;
  TimingReport timing;
};

// Full cross product methods x hospital counts x skews x repeats, in that
// loop order.  The same per-repeat tensor is shared by every cell so method
// comparisons are paired.
std::vector<ExperimentResult> run_sweep(const SweepSpec& spec);

struct AggregateRow {
  std::string scenario;
  std::string method;
  std::size_t k = 1;
  double skew = 1.0;
  double rmse_mean = 0.0;
  double rmse_sd = 0.0;
  double comp_s = 0.0;
  double comm_s = 0.0;
  double align_s = 0.0;
  double total_s = 0.0;
  std::size_t runs = 0;
};

// one row per (scenario, method, k, skew), sorted by that key; means over
// repeats, sample standard deviation for the rmse
std::vector<AggregateRow> aggregate(const std::vector<ExperimentResult>& results);

void write_csv(const std::vector<AggregateRow>& rows, const std::string& path);
std::vector<AggregateRow> read_csv(const std::string& path);

void write_json(const std::vector<ExperimentResult>& results,
                const std::vector<AggregateRow>& rows, const std::string& path);

}  // namespace trip
