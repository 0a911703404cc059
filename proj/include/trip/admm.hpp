#pragma once

#include <cstdint>
#include <stdexcept>

#include "trip/kernels.hpp"

namespace trip {

struct TripConfig {
  int rank = 5;
  double lambda = 1e-2;  // orthonormality penalty weight
  double omega = 1.0;    // local/global coupling weight
  double mu = 1.0;       // consensus multiplier step
  int max_iter = 100;
  double tol = 1e-6;
  double ridge = 0.0;    // 0 = automatic scaled jitter on solve failure only
  std::uint64_t seed = 0;

  void validate() const {
    if (rank < 1) throw std::invalid_argument("rank must be >= 1");
    if (lambda < 0 || omega <= 0 || mu <= 0)
      throw std::invalid_argument("lambda must be >= 0, omega and mu > 0");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
    if (tol <= 0) throw std::invalid_argument("tol must be > 0");
    if (ridge < 0) throw std::invalid_argument("ridge must be >= 0");
  }
};

// one hospital's view of the factorization
struct HospitalState {
  const SparseTensor* shard = nullptr;
  Mat patient_factor;               // A_k for mode 0, never leaves the hospital
  std::vector<Mat> feature_factors; // local copies A_k^(n), n = 1..N-1
  std::vector<Mat> globals;         // last received global factors
  std::vector<Mat> multipliers;     // scaled multipliers H_k^(n)

  std::vector<Mat> local_factors() const {
    std::vector<Mat> f;
    f.reserve(feature_factors.size() + 1);
    f.push_back(patient_factor);
    for (const Mat& m : feature_factors) f.push_back(m);
    return f;
  }
};

// coordinator's per-feature-mode consensus state
struct ServerState {
  std::vector<Mat> global_factors;  // A^(n)
  std::vector<Mat> b_factors;       // auxiliary B^(n)
  std::vector<Mat> y_multipliers;   // Y^(n)
};

class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(std::size_t mode, double condition)
      : std::runtime_error("normal-equation matrix for mode " +
                           std::to_string(mode) +
                           " is numerically singular (cond ~ " +
                           std::to_string(condition) + ")"),
        mode(mode),
        condition(condition) {}
  std::size_t mode;
  double condition;
};

// Least-squares patient update: argmin ||A Pi^T - X_(0)||^2 solved through
// the normal equations with the Hadamard-of-Grams identity.
Mat update_patient_factor(const SparseTensor& shard,
                          const std::vector<Mat>& feature_factors,
                          double ridge = 0.0);

// Local feature update for absolute mode n (1-based among all modes):
//   A_k = (X_(n) Pi_k + omega A + H_k)(Pi_k^T Pi_k + omega I)^{-1}
Mat update_local_feature_factor(const HospitalState& state, const Mat& global_factor,
                                std::size_t mode, const TripConfig& cfg);

// Global consensus update:
//   A = ((mu + K omega) I + lambda B B^T)^{-1}
//       (lambda B + mu B + Y + omega sum_k A_k - sum_k H_k)
// Inputs are ordered by hospital id; `k_count` must equal locals.size().
Mat update_global_feature_factor(const std::vector<Mat>& locals,
                                 const std::vector<Mat>& h_multipliers,
                                 const Mat& b, const Mat& y,
                                 const TripConfig& cfg, std::size_t k_count);

inline Mat update_b(const Mat& a, const Mat& y, double mu) { return a + y / mu; }

inline Mat update_y(const Mat& y, const Mat& b, const Mat& a, double mu) {
  return y + mu * (b - a);
}

inline Mat update_h(const Mat& h, const Mat& global_a, const Mat& local_a,
                    double omega) {
  return h + omega * (global_a - local_a);
}

// sqrt(sum_k ||A_k - A||_F^2)
double primal_residual(const std::vector<Mat>& locals, const Mat& global_a);

}  // namespace trip
