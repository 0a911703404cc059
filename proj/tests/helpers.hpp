#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trip/cp_model.hpp"
#include "trip/rng.hpp"
#include "trip/sparse_tensor.hpp"

namespace testutil {

inline trip::Mat rand_mat(trip::Rng& rng, Eigen::Index rows, Eigen::Index cols,
                          double lo = 0.0, double hi = 1.0) {
  trip::Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      m(i, j) = lo + (hi - lo) * rng.uniform01();
  return m;
}

// visit every cell of a dense grid in lexicographic index order
template <class Fn>
void for_each_cell(const std::vector<std::size_t>& shape, Fn fn) {
  std::vector<std::uint32_t> cursor(shape.size(), 0);
  while (true) {
    fn(cursor);
    std::size_t m = shape.size();
    while (m-- > 0) {
      if (++cursor[m] < shape[m]) break;
      cursor[m] = 0;
      if (m == 0) return;
    }
  }
}

// random sparse tensor with positive values at a given fill fraction
inline trip::SparseTensor rand_tensor(trip::Rng& rng,
                                      const std::vector<std::size_t>& shape,
                                      double density) {
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  for_each_cell(shape, [&](const std::vector<std::uint32_t>& cell) {
    const double keep = rng.uniform01();
    const double v = 0.1 + rng.uniform01();
    if (keep < density) {
      idx.insert(idx.end(), cell.begin(), cell.end());
      val.push_back(v);
    }
  });
  return trip::SparseTensor(shape, std::move(idx), std::move(val));
}

// dense tensor holding every cell of a CP model (entries must be positive)
inline trip::SparseTensor model_tensor(const trip::CpModel& model,
                                       const std::vector<std::size_t>& shape) {
  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  for_each_cell(shape, [&](const std::vector<std::uint32_t>& cell) {
    idx.insert(idx.end(), cell.begin(), cell.end());
    val.push_back(model.at(cell));
  });
  return trip::SparseTensor(shape, std::move(idx), std::move(val));
}

inline trip::CpModel rand_model(trip::Rng& rng,
                                const std::vector<std::size_t>& shape, int rank) {
  trip::CpModel m;
  for (std::size_t d : shape)
    m.factors.push_back(rand_mat(rng, static_cast<Eigen::Index>(d), rank));
  return m;
}

// dense grid of a sparse tensor, flattened in lexicographic index order
inline std::vector<double> dense_grid(const trip::SparseTensor& t) {
  std::size_t total = 1;
  for (std::size_t d : t.shape()) total *= d;
  std::vector<double> g(total, 0.0);
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    std::size_t flat = 0;
    for (std::size_t m = 0; m < t.order(); ++m)
      flat = flat * t.dim(m) + t.index(e, m);
    g[flat] = t.value(e);
  }
  return g;
}

// ||model - tensor||_F^2 over the full grid, evaluated cell by cell
inline double dense_residual_sq(const trip::CpModel& model,
                                const trip::SparseTensor& t) {
  const auto grid = dense_grid(t);
  double res = 0.0;
  std::size_t i = 0;
  for_each_cell(t.shape(), [&](const std::vector<std::uint32_t>& cell) {
    const double d = model.at(cell) - grid[i++];
    res += d * d;
  });
  return res;
}

// fresh empty scratch directory under the system temp root
inline std::filesystem::path fresh_dir(const std::string& tag) {
  static int counter = 0;
  const auto p = std::filesystem::temp_directory_path() /
                 ("trip_test_" + tag + "_" + std::to_string(++counter));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
