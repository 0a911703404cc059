#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <optional>

#include "trip/admm.hpp"
#include "trip/alignment.hpp"
#include "trip/message.hpp"
#include "trip/transport.hpp"

namespace trip {

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FederationConfig {
  std::size_t k = 1;
  enum class Transport { in_process, tcp } transport = Transport::in_process;
  double link_bytes_per_sec = 15e6;
  TripConfig trip;

  // `wall` reads the monotonic clock around compute sections; `modeled`
  // derives compute time from a deterministic work count, which makes whole
  // experiment reports byte-for-byte reproducible.
  enum class TimeMode { wall, modeled } time_mode = TimeMode::wall;
  double modeled_work_per_sec = 1e9;

  bool align = false;      // run vocabulary alignment before factoring
  int align_retries = 3;   // reruns allowed after a region-size conflict

  // serving without alignment needs the global feature dimensions up front;
  // with alignment they come out of the protocol
  std::vector<std::size_t> feature_dims;
  std::size_t feature_modes = 0;   // serve-mode hint when feature_dims empty
  std::size_t total_patients = 0;  // optional: lets a serving coordinator report rmse

  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::uint16_t hospital_id = 0;  // participant serve role

  void validate() const;
};

struct IterationStats {
  double objective = 0.0;      // sum of hospital fits + orthonormality penalty
  double fit_sum_squares = 0.0;
  double residual = 0.0;       // max over modes of normalised primal residual
  double rmse = 0.0;           // NaN when the grid size is unknown
};

struct Trace {
  std::vector<IterationStats> iterations;
  bool converged = false;

  double final_rmse() const {
    return iterations.empty() ? std::numeric_limits<double>::quiet_NaN()
                              : iterations.back().rmse;
  }
};

// Wall-or-modeled compute meter.  Sections are bracketed by start/stop; in
// modeled mode the bracketing is ignored and `charge` accumulates work units
// instead.  The work estimates are a deterministic cost model (roughly
// floating-point operation counts), not a calibrated benchmark.
class WorkClock {
 public:
  WorkClock(bool modeled, double work_per_sec);
  void start();
  void stop();
  void charge(double work_units);
  double seconds() const;
  void reset();

 private:
  bool modeled_;
  double work_per_sec_;
  double accum_ = 0.0;
  double work_ = 0.0;
  double t0_ = 0.0;
  bool running_ = false;
};

struct PhaseBytes {
  std::uint64_t to_server = 0;
  std::uint64_t to_hospitals = 0;
};

struct TimingReport {
  // factoring phase (handshake included)
  double computation_seconds = 0.0;
  double communication_seconds = 0.0;
  std::uint64_t bytes_to_server = 0;
  std::uint64_t bytes_to_hospitals = 0;
  // alignment phase
  double alignment_seconds = 0.0;
  double alignment_compute_seconds = 0.0;
  std::uint64_t align_bytes_to_server = 0;
  std::uint64_t align_bytes_to_hospitals = 0;

  double link_bytes_per_sec = 15e6;

  double total_seconds() const {
    return computation_seconds + communication_seconds + alignment_seconds;
  }
};

// Assemble a report.  Synchronous rounds: per-iteration compute is the
// slowest hospital plus the coordinator's own work for that iteration;
// transfer time is total bytes over the configured link rate.
TimingReport timing_model(
    const std::vector<std::vector<double>>& hospital_seconds_by_iteration,
    const std::vector<double>& coordinator_seconds_by_iteration,
    PhaseBytes factor_bytes, double align_compute_seconds,
    PhaseBytes align_bytes, double link_bytes_per_sec);

struct MessageLogEntry {
  bool to_coordinator = false;
  std::size_t frame_bytes = 0;
  Message msg;
};

struct MessageLog {
  std::mutex mu;
  std::vector<MessageLogEntry> entries;
  void add(bool to_coordinator, std::size_t bytes, Message msg) {
    std::lock_guard<std::mutex> lk(mu);
    entries.push_back({to_coordinator, bytes, std::move(msg)});
  }
};

struct TripResult {
  std::vector<CpModel> hospital_models;  // per-hospital factors, patient first
  std::vector<Mat> global_factors;       // consensus feature factors
  Trace trace;
  TimingReport timing;
};

struct AlignmentOutcome {
  std::vector<std::vector<AlignmentResult>> per_hospital;  // [hospital][feature mode]
  double compute_seconds = 0.0;
  PhaseBytes bytes;
  int max_attempts_used = 0;
};

// --- session layer -------------------------------------------------------
// One coordinator session drives handshake, optional alignment, and the
// factoring rounds over a set of channels; the participant session mirrors
// it.  These are public so protocol behaviour can be exercised directly.

class CoordinatorSession {
 public:
  CoordinatorSession(std::vector<std::shared_ptr<Channel>> accepted,
                     const FederationConfig& cfg, MessageLog* log = nullptr);

  void handshake();  // maps channels to hospital ids

  // alignment for `n_feature_modes` modes; returns merged region sizes per
  // mode and accumulates align-phase bytes/compute
  std::vector<std::map<std::uint32_t, std::uint64_t>> align(std::size_t n_feature_modes);

  struct FactorOutcome {
    std::vector<Mat> globals;
    Trace trace;
    std::vector<std::vector<double>> hospital_seconds;  // [iteration][hospital]
    std::vector<double> coordinator_seconds;            // [iteration]
  };
  // `total_cells` = 0 leaves rmse as NaN in the trace
  FactorOutcome factor(const std::vector<std::size_t>& feature_dims,
                       double total_cells);

  const PhaseBytes& handshake_bytes() const { return handshake_bytes_; }
  const PhaseBytes& align_phase_bytes() const { return align_bytes_; }
  const PhaseBytes& factor_phase_bytes() const { return factor_bytes_; }
  double align_compute_seconds() const { return align_compute_seconds_; }
  int align_attempts() const { return align_attempts_; }
  const std::vector<std::size_t>& aligned_dims() const { return aligned_dims_; }

 private:
  Message recv_from(std::size_t hospital, MsgType expect, std::uint16_t mode,
                    std::uint32_t round);
  void send_to(std::size_t hospital, const Message& m);

  std::vector<std::shared_ptr<Channel>> raw_;
  std::vector<std::shared_ptr<Channel>> by_id_;
  FederationConfig cfg_;
  MessageLog* log_;
  PhaseBytes handshake_bytes_, align_bytes_, factor_bytes_;
  PhaseBytes* current_ = &factor_bytes_;
  double align_compute_seconds_ = 0.0;
  int align_attempts_ = 0;
  std::vector<std::size_t> aligned_dims_;
};

class ParticipantSession {
 public:
  ParticipantSession(std::shared_ptr<Channel> ch, std::uint16_t id,
                     const FederationConfig& cfg, MessageLog* log = nullptr);

  void handshake();

  // one entry per feature mode: the hospital's vocabulary elements
  std::vector<AlignmentResult> align(
      const std::vector<std::vector<std::uint64_t>>& vocabs);

  // runs factoring rounds until the coordinator signals convergence;
  // the shard must already be globally indexed
  HospitalState factor(const SparseTensor& shard);

 private:
  Message recv(MsgType expect, std::uint16_t mode, std::uint32_t round,
               bool allow_abort = true);
  void send(const Message& m);

  std::shared_ptr<Channel> ch_;
  std::uint16_t id_;
  FederationConfig cfg_;
  MessageLog* log_;
};

// --- drivers -------------------------------------------------------------

// Consensus factorization over pre-aligned shards (shards share feature
// vocabularies and dimensions).  Spawns one thread per hospital plus the
// coordinator; `transport` picks in-process queues or TCP loopback.
TripResult run_trip(const std::vector<SparseTensor>& shards,
                    const FederationConfig& cfg, MessageLog* log = nullptr);

// Standalone vocabulary alignment. vocabs[k][mode] lists hospital k's
// elements for that feature mode.  With k == 1 no protocol messages are
// exchanged at all; the single hospital's sorted vocabulary is the answer.
AlignmentOutcome run_alignment(
    const std::vector<std::vector<std::vector<std::uint64_t>>>& vocabs,
    const FederationConfig& cfg, MessageLog* log = nullptr);

// Full pipeline: align observed vocabularies, reindex every shard into the
// agreed global indexing, then factor.  Alignment traffic and compute land
// in the alignment slots of the timing report.
TripResult run_trip_with_alignment(const std::vector<SparseTensor>& shards,
                                   const FederationConfig& cfg,
                                   AlignmentOutcome* align_out = nullptr,
                                   MessageLog* log = nullptr);

// work estimates for the deterministic cost model
double work_patient_update(std::size_t nnz, std::size_t order,
                           std::size_t patients, int rank);
double work_feature_update(std::size_t nnz, std::size_t order, std::size_t dim,
                           int rank);
double work_fit(std::size_t nnz, std::size_t order,
                const std::vector<std::size_t>& dims, int rank);
double work_global_update(std::size_t dim, int rank, std::size_t k);
double work_encode_set(std::size_t set_size);
double work_classify(std::size_t set_size, double degree_sum);

}  // namespace trip
