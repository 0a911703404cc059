#pragma once

#include "trip/federation.hpp"

namespace trip {

struct CentralResult {
  CpModel model;
  Trace trace;
  TimingReport timing;
};

// Pooled-data baseline: the consensus engine run with one hospital holding
// the whole tensor (always over in-process channels).  Its communication
// cost is modeled as uploading the raw entries once at the link rate.
CentralResult run_central(const SparseTensor& tensor, const FederationConfig& cfg);

struct Assignment {
  std::vector<std::size_t> match;  // match[pivot column] = matched column
  double total_cost = 0.0;
};

// exact minimum-cost assignment on a square matrix, O(n^3)
Assignment hungarian(const Mat& cost);

struct LocalResult {
  std::vector<Mat> global_factors;       // uniformly averaged feature factors
  std::vector<CpModel> hospital_models;  // permuted patient factor + averages
  Trace trace;                           // one aggregated evaluation point
  TimingReport timing;
};

// Isolated baseline: each hospital factors its own shard with the central
// routine (same seed everywhere), then the server matches phenotype columns
// against hospital 0 by cosine similarity summed over feature modes, permutes
// whole models column-wise, and averages the feature factors uniformly.
// There is no joint refitting afterwards.
LocalResult run_local(const std::vector<SparseTensor>& shards,
                      const FederationConfig& cfg);

}  // namespace trip
