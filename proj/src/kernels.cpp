#include "trip/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace trip {

namespace {

// column strides for the unfolding: J_m = prod of dims of modes before m,
// skipping `mode` itself
std::vector<std::size_t> unfold_strides(const std::vector<std::size_t>& shape,
                                        std::size_t mode) {
  std::vector<std::size_t> stride(shape.size(), 0);
  std::size_t j = 1;
  for (std::size_t m = 0; m < shape.size(); ++m) {
    if (m == mode) continue;
    stride[m] = j;
    j *= shape[m];
  }
  return stride;
}

void check_factors(const std::vector<Mat>& factors,
                   const std::vector<std::size_t>& shape, std::size_t mode,
                   Eigen::Index rank) {
  if (factors.size() != shape.size())
    throw std::invalid_argument("factor count does not match tensor order");
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (m == mode) continue;  // unused, may be empty
    if (static_cast<std::size_t>(factors[m].rows()) != shape[m])
      throw std::invalid_argument("factor row count does not match dimension");
    if (factors[m].cols() != rank)
      throw std::invalid_argument("factor rank mismatch");
  }
}

Eigen::Index common_rank(const std::vector<Mat>& factors, std::size_t skip) {
  for (std::size_t m = 0; m < factors.size(); ++m)
    if (m != skip) return factors[m].cols();
  throw std::invalid_argument("no factors left after skip");
}

}  // namespace

SparseMatrix matricize(const SparseTensor& t, std::size_t mode) {
  if (mode >= t.order()) throw std::invalid_argument("matricize: mode out of range");
  const auto stride = unfold_strides(t.shape(), mode);
  SparseMatrix m;
  m.rows = t.dim(mode);
  m.cols = 1;
  for (std::size_t mo = 0; mo < t.order(); ++mo)
    if (mo != mode) m.cols *= t.dim(mo);
  m.row.reserve(t.nnz());
  m.col.reserve(t.nnz());
  m.val.reserve(t.nnz());
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    std::size_t col = 0;
    for (std::size_t mo = 0; mo < t.order(); ++mo)
      if (mo != mode) col += stride[mo] * t.index(e, mo);
    m.row.push_back(t.index(e, mode));
    m.col.push_back(col);
    m.val.push_back(t.value(e));
  }
  return m;
}

Mat khatri_rao(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("khatri_rao: column count mismatch");
  // column r is kron(a(:,r), b(:,r)): a's row 0 block stacked first
  Mat out(a.rows() * b.rows(), a.cols());
  for (Eigen::Index r = 0; r < a.cols(); ++r)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = 0; j < b.rows(); ++j)
        out(i * b.rows() + j, r) = a(i, r) * b(j, r);
  return out;
}

Mat pi_product(const std::vector<Mat>& factors, std::size_t skip_mode) {
  if (factors.size() < 2)
    throw std::invalid_argument("pi_product: need at least two factors");
  if (skip_mode >= factors.size())
    throw std::invalid_argument("pi_product: skip mode out of range");
  // descending mode order, so the lowest mode's rows end up varying fastest
  // -- the pairing that makes unfolded_tensor = factor * pi_product^T hold
  Mat acc;
  bool first = true;
  for (std::size_t m = factors.size(); m-- > 0;) {
    if (m == skip_mode) continue;
    if (first) {
      acc = factors[m];
      first = false;
    } else {
      acc = khatri_rao(acc, factors[m]);
    }
  }
  return acc;
}

Mat gram_hadamard(const std::vector<Mat>& factors, std::size_t skip_mode) {
  const Eigen::Index rank = common_rank(factors, skip_mode);
  Mat g = Mat::Ones(rank, rank);
  for (std::size_t m = 0; m < factors.size(); ++m) {
    if (m == skip_mode) continue;
    if (factors[m].cols() != rank)
      throw std::invalid_argument("gram_hadamard: factor rank mismatch");
    g = g.cwiseProduct(factors[m].transpose() * factors[m]);
  }
  return g;
}

Mat mttkrp(const SparseTensor& t, const std::vector<Mat>& factors,
           std::size_t mode) {
  if (mode >= t.order()) throw std::invalid_argument("mttkrp: mode out of range");
  const Eigen::Index rank = common_rank(factors, mode);
  check_factors(factors, t.shape(), mode, rank);

  Mat out = Mat::Zero(t.dim(mode), rank);
  Eigen::RowVectorXd prod(rank);
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    prod.setConstant(t.value(e));
    for (std::size_t m = 0; m < t.order(); ++m) {
      if (m == mode) continue;
      prod = prod.cwiseProduct(factors[m].row(t.index(e, m)));
    }
    out.row(t.index(e, mode)) += prod;
  }
  return out;
}

double model_sum_squares(const CpModel& model) {
  const Eigen::Index rank = model.rank();
  Mat g = Mat::Ones(rank, rank);
  for (const Mat& f : model.factors) g = g.cwiseProduct(f.transpose() * f);
  return g.sum();
}

double model_dot_tensor(const CpModel& model, const SparseTensor& t) {
  if (model.order() != t.order())
    throw std::invalid_argument("model order does not match tensor");
  const Eigen::Index rank = model.rank();
  Eigen::RowVectorXd prod(rank);
  double s = 0.0;
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    prod.setOnes();
    for (std::size_t m = 0; m < t.order(); ++m)
      prod = prod.cwiseProduct(model.factors[m].row(t.index(e, m)));
    s += t.value(e) * prod.sum();
  }
  return s;
}

double residual_sum_squares(const CpModel& model, const SparseTensor& t) {
  // ||X||^2 - 2<X,O> + ||O||^2; zero cells of O contribute through ||X||^2
  return model_sum_squares(model) - 2.0 * model_dot_tensor(model, t) +
         t.sum_squares();
}

double rmse(const CpModel& model, const SparseTensor& t, bool over_nonzeros) {
  const double denom = over_nonzeros ? static_cast<double>(t.nnz()) : t.cell_count();
  if (denom <= 0.0) throw std::invalid_argument("rmse: empty denominator");
  // guard against negative round-off when the fit is essentially exact
  const double ss = std::max(0.0, residual_sum_squares(model, t));
  return std::sqrt(ss / denom);
}

double orthonormality_penalty(const Mat& a) {
  const Mat d = Mat::Identity(a.cols(), a.cols()) - a.transpose() * a;
  return d.squaredNorm();
}

double objective(const std::vector<CpModel>& models,
                 const std::vector<SparseTensor>& shards,
                 const std::vector<Mat>& feature_factors, double lambda) {
  if (models.size() != shards.size())
    throw std::invalid_argument("objective: model / shard count mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < models.size(); ++k)
    s += residual_sum_squares(models[k], shards[k]);
  for (const Mat& f : feature_factors)
    s += 0.5 * lambda * orthonormality_penalty(f);
  return s;
}

}  // namespace trip
