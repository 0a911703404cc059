#pragma once

#include "trip/cp_model.hpp"
#include "trip/sparse_tensor.hpp"

namespace trip {

// Mode-n unfolding of a sparse tensor, kept in coordinate form.  Column of
// entry e is sum over modes m != n of index(e,m) * J_m where J_m is the
// product of the dimensions of the preceding non-unfolded modes (ascending
// mode order, skipping n).  This matches the column ordering produced by
// khatri_rao / pi_product, i.e. X_(n) = A^(n) * pi_product(factors, n)^T.
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row;
  std::vector<std::size_t> col;
  std::vector<double> val;

  std::size_t nnz() const { return val.size(); }
};

SparseMatrix matricize(const SparseTensor& t, std::size_t mode);

// Column-wise Khatri-Rao product: (I*J) x R; column r is the Kronecker
// product of the two r-th columns, so the SECOND argument's row index
// varies fastest within a column block.
Mat khatri_rao(const Mat& a, const Mat& b);

// Khatri-Rao chain over all factors except `skip_mode`, highest mode first,
// which leaves the lowest remaining mode's row index varying fastest.
// Requires at least two factors in the list; with exactly one factor
// remaining after the skip, returns that factor.
Mat pi_product(const std::vector<Mat>& factors, std::size_t skip_mode);

// Gram of pi_product without forming it: Hadamard product of the factor
// Grams A^(m)^T A^(m) over m != skip_mode.
Mat gram_hadamard(const std::vector<Mat>& factors, std::size_t skip_mode);

// Matricized-tensor times Khatri-Rao product: X_(mode) * pi_product(...),
// computed directly on the sparse entries.  factors[mode] may be empty.
Mat mttkrp(const SparseTensor& t, const std::vector<Mat>& factors, std::size_t mode);

// <X, X> over the full grid via the Gram identity (no densification)
double model_sum_squares(const CpModel& model);

// <X, O> -- only the stored entries of O contribute
double model_dot_tensor(const CpModel& model, const SparseTensor& t);

// ||X - O||_F^2 over the full dense grid
double residual_sum_squares(const CpModel& model, const SparseTensor& t);

// sqrt(||X - O||_F^2 / cells); `over_nonzeros` swaps the denominator for nnz
double rmse(const CpModel& model, const SparseTensor& t, bool over_nonzeros = false);

// ||I - A^T A||_F^2
double orthonormality_penalty(const Mat& a);

// sum_k ||X_k - O_k||^2 + (lambda/2) * sum_n penalty(feature_factors[n]).
// models[k] supplies hospital k's factors for the fit term; the shared
// feature factors enter only through the penalty.
double objective(const std::vector<CpModel>& models,
                 const std::vector<SparseTensor>& shards,
                 const std::vector<Mat>& feature_factors, double lambda);

}  // namespace trip
