#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trip/cp_model.hpp"
#include "trip/sparse_tensor.hpp"

namespace trip {

// one row of the event CSV; columns patient_id, kind, code, and either
// timestamp (epoch seconds) or timestamp_iso8601, matched by header name
struct EventRecord {
  std::string patient;
  double timestamp = 0.0;
  std::string kind;
  std::uint64_t code = 0;
};

std::vector<EventRecord> read_events(const std::string& path);

struct CoOccurrenceSpec {
  std::string kind_a = "medication";
  std::string kind_b = "lab_abnormal";
  double window_seconds = 10800.0;  // pairs with |t_a - t_b| <= window count
  double cap = 3.0;                 // counts are truncated here; 0 disables
};

struct BuiltTensor {
  SparseTensor tensor;  // patient x kind_a code x kind_b code
  std::vector<std::string> patient_ids;                    // row order
  std::vector<std::vector<std::uint64_t>> feature_vocabs;  // sorted codes per feature mode
};

// Count qualifying (kind_a, kind_b) event pairs per patient within the time
// window, truncate at the cap.  Rows cover every patient present in the
// event list; columns cover every code of the matching kind, both sorted.
BuiltTensor build_co_occurrence_tensor(const std::vector<EventRecord>& events,
                                       const CoOccurrenceSpec& spec);

struct SyntheticSpec {
  std::vector<std::size_t> shape;
  int rank = 5;
  double noise_sd = 0.0;
  double cap = 10.0;     // quantized values are clamped to [0, cap]
  bool quantize = true;  // false keeps exact low-rank cell values
  std::uint64_t seed = 0;
};

struct SyntheticTensor {
  SparseTensor tensor;
  CpModel ground_truth;
};

// Low-rank count-like tensor: uniform [0,1) factors, optional Gaussian cell
// noise, then (by default) rounding clamped into [0, cap].  Zero cells are
// simply absent from the result.
SyntheticTensor synthesize_tensor(const SyntheticSpec& spec);

struct PartitionPlan {
  std::vector<std::vector<std::uint32_t>> patients;  // sorted global ids per hospital
  std::size_t total_patients = 0;

  std::size_t hospitals() const { return patients.size(); }
};

// Horizontal split over the patient mode.  `skew` is hospital 0's share;
// shares within 1e-9 of 1/k mean an even split (remainders to low ids).
// Otherwise hospital 0 gets floor(skew * patients) and the rest is split
// evenly, with single patients taken from the largest hospital until every
// hospital has at least one.  Assignment itself is a seeded shuffle.
PartitionPlan make_partition_plan(std::size_t patients, std::size_t k,
                                  double skew, std::uint64_t seed);

// patient rows are rebased per shard; feature modes are untouched
std::vector<SparseTensor> partition_patients(const SparseTensor& t,
                                             const PartitionPlan& plan);

// exact inverse of partition_patients for the same plan
SparseTensor concatenate_patients(const std::vector<SparseTensor>& shards,
                                  const PartitionPlan& plan);

}  // namespace trip
