#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace trip {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// Rank-R CP model: one I_n x R factor matrix per mode.
struct CpModel {
  std::vector<Mat> factors;
  std::vector<std::string> mode_names;

  std::size_t order() const { return factors.size(); }
  Eigen::Index rank() const { return factors.empty() ? 0 : factors.front().cols(); }

  // value of the reconstructed tensor at one cell
  double at(const std::vector<std::uint32_t>& index) const {
    double s = 0.0;
    for (Eigen::Index r = 0; r < rank(); ++r) {
      double p = 1.0;
      for (std::size_t m = 0; m < factors.size(); ++m) p *= factors[m](index[m], r);
      s += p;
    }
    return s;
  }
};

}  // namespace trip
