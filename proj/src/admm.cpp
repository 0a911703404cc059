#include "trip/admm.hpp"

#include <cmath>

namespace trip {

namespace {

// Solve X G = M for X with G symmetric positive (semi)definite.  Cholesky
// first; on failure add scaled jitter once, then give up with a diagnostic.
Mat solve_normal(const Mat& g, const Mat& m, std::size_t mode, double ridge) {
  // LLT reports Success on NaN input, so non-finite grams need their own gate
  if (!g.allFinite()) throw SingularMatrixError(mode, INFINITY);
  auto attempt = [&](const Mat& gg) -> std::pair<bool, Mat> {
    Eigen::LLT<Mat> llt(gg);
    if (llt.info() != Eigen::Success) return {false, Mat()};
    return {true, llt.solve(m.transpose()).transpose()};
  };
  Mat g_eff = g;
  if (ridge > 0.0) g_eff.diagonal().array() += ridge;
  if (auto [ok, x] = attempt(g_eff); ok) return x;
  // automatic jitter proportional to the matrix scale
  const double jitter = 1e-10 * std::max(1.0, g.trace() / static_cast<double>(g.rows()));
  g_eff.diagonal().array() += jitter;
  if (auto [ok, x] = attempt(g_eff); ok) return x;
  Eigen::JacobiSVD<Mat> svd(g);
  const double smin = svd.singularValues().tail(1)(0);
  const double smax = svd.singularValues()(0);
  throw SingularMatrixError(mode, smin > 0 ? smax / smin : INFINITY);
}

}  // namespace

Mat update_patient_factor(const SparseTensor& shard,
                          const std::vector<Mat>& feature_factors,
                          double ridge) {
  if (feature_factors.size() + 1 != shard.order())
    throw std::invalid_argument("feature factor count does not match order");
  std::vector<Mat> full(shard.order());
  for (std::size_t n = 1; n < shard.order(); ++n) full[n] = feature_factors[n - 1];
  const Mat m = mttkrp(shard, full, 0);
  const Mat g = gram_hadamard(full, 0);
  return solve_normal(g, m, 0, ridge);
}

Mat update_local_feature_factor(const HospitalState& state, const Mat& global_factor,
                                std::size_t mode, const TripConfig& cfg) {
  const SparseTensor& shard = *state.shard;
  if (mode == 0 || mode >= shard.order())
    throw std::invalid_argument("feature update: mode out of range");
  const std::vector<Mat> full = state.local_factors();
  Mat m = mttkrp(shard, full, mode);
  m += cfg.omega * global_factor + state.multipliers[mode - 1];
  Mat g = gram_hadamard(full, mode);
  g.diagonal().array() += cfg.omega;
  return solve_normal(g, m, mode, cfg.ridge);
}

Mat update_global_feature_factor(const std::vector<Mat>& locals,
                                 const std::vector<Mat>& h_multipliers,
                                 const Mat& b, const Mat& y,
                                 const TripConfig& cfg, std::size_t k_count) {
  if (locals.empty() || locals.size() != k_count)
    throw std::invalid_argument("global update: k_count mismatch");
  if (h_multipliers.size() != locals.size())
    throw std::invalid_argument("global update: multiplier count mismatch");
  const double k = static_cast<double>(k_count);

  Mat rhs = cfg.lambda * b + cfg.mu * b + y;
  for (const Mat& a : locals) rhs += cfg.omega * a;
  for (const Mat& h : h_multipliers) rhs -= h;

  // (mu + K omega) I + lambda B B^T is I_n x I_n; solve from the left
  Mat lhs = cfg.lambda * (b * b.transpose());
  lhs.diagonal().array() += cfg.mu + k * cfg.omega;
  if (!lhs.allFinite()) throw SingularMatrixError(0, INFINITY);
  Eigen::LLT<Mat> llt(lhs);
  if (llt.info() != Eigen::Success) {
    Eigen::JacobiSVD<Mat> svd(lhs);
    const double smin = svd.singularValues().tail(1)(0);
    throw SingularMatrixError(0, smin > 0 ? svd.singularValues()(0) / smin : INFINITY);
  }
  return llt.solve(rhs);
}

double primal_residual(const std::vector<Mat>& locals, const Mat& global_a) {
  double s = 0.0;
  for (const Mat& a : locals) s += (a - global_a).squaredNorm();
  return std::sqrt(s);
}

}  // namespace trip
