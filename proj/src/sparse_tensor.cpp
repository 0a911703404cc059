#include "trip/sparse_tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace trip {

SparseTensor::SparseTensor(std::vector<std::size_t> shape,
                           std::vector<std::uint32_t> flat_indices,
                           std::vector<double> values,
                           std::vector<std::string> mode_names)
    : shape_(std::move(shape)), mode_names_(std::move(mode_names)) {
  if (shape_.empty()) throw std::invalid_argument("tensor needs at least one mode");
  for (std::size_t d : shape_)
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
  const std::size_t n = shape_.size();
  if (!mode_names_.empty() && mode_names_.size() != n)
    throw std::invalid_argument("mode name count does not match order");
  if (flat_indices.size() != values.size() * n)
    throw std::invalid_argument("index / value length mismatch");

  const std::size_t m = values.size();
  for (std::size_t e = 0; e < m; ++e) {
    const double v = values[e];
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("entry values must be finite and non-negative");
    for (std::size_t mo = 0; mo < n; ++mo)
      if (flat_indices[e * n + mo] >= shape_[mo])
        throw std::invalid_argument("entry index out of bounds");
  }

  // canonical form: sort by index, merge duplicates, drop zeros
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
    return std::lexicographical_compare(
        flat_indices.begin() + a * n, flat_indices.begin() + (a + 1) * n,
        flat_indices.begin() + b * n, flat_indices.begin() + (b + 1) * n);
  });

  indices_.reserve(flat_indices.size());
  values_.reserve(m);
  for (std::size_t p = 0; p < m; ++p) {
    const std::size_t e = perm[p];
    const auto* idx = flat_indices.data() + e * n;
    if (!values_.empty() &&
        std::equal(idx, idx + n, indices_.end() - static_cast<std::ptrdiff_t>(n))) {
      values_.back() += values[e];
    } else {
      indices_.insert(indices_.end(), idx, idx + n);
      values_.push_back(values[e]);
    }
  }
  // second pass: summing may or may not leave zeros (inputs are >= 0, so
  // only exact-zero inputs produce zero sums)
  std::size_t w = 0;
  for (std::size_t e = 0; e < values_.size(); ++e) {
    if (values_[e] == 0.0) continue;
    if (w != e) {
      std::copy(indices_.begin() + e * n, indices_.begin() + (e + 1) * n,
                indices_.begin() + w * n);
      values_[w] = values_[e];
    }
    ++w;
  }
  values_.resize(w);
  indices_.resize(w * n);
}

double SparseTensor::cell_count() const {
  double c = 1.0;
  for (std::size_t d : shape_) c *= static_cast<double>(d);
  return c;
}

double SparseTensor::sum_squares() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

void SparseTensor::set_mode_names(std::vector<std::string> names) {
  if (!names.empty() && names.size() != order())
    throw std::invalid_argument("mode name count does not match order");
  mode_names_ = std::move(names);
}

SparseTensor read_tensor(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open tensor file: " + path);

  std::vector<std::size_t> shape;
  std::vector<std::uint32_t> indices;
  std::vector<double> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line);
      std::string tag;
      ls >> tag;
      if (tag == "#shape") {
        if (!shape.empty())
          throw std::runtime_error(path + ": duplicate #shape header");
        std::size_t d;
        while (ls >> d) shape.push_back(d);
        if (shape.empty())
          throw std::runtime_error(path + ": empty #shape header");
      }
      continue;
    }
    if (shape.empty())
      throw std::runtime_error(path + ": entry before #shape header (line " +
                               std::to_string(lineno) + ")");
    std::istringstream ls(line);
    std::vector<double> nums;
    double x;
    while (ls >> x) nums.push_back(x);
    if (nums.size() != shape.size() + 1)
      throw std::runtime_error(path + ": malformed entry at line " +
                               std::to_string(lineno));
    for (std::size_t m = 0; m < shape.size(); ++m) {
      if (nums[m] < 0 || nums[m] != std::floor(nums[m]))
        throw std::runtime_error(path + ": non-integer index at line " +
                                 std::to_string(lineno));
      indices.push_back(static_cast<std::uint32_t>(nums[m]));
    }
    values.push_back(nums.back());
  }
  if (shape.empty()) throw std::runtime_error(path + ": missing #shape header");

  std::vector<std::string> names;
  std::ifstream modes(path + ".modes");
  if (modes) {
    std::string nm;
    while (std::getline(modes, nm))
      if (!nm.empty()) names.push_back(nm);
    if (names.size() != shape.size()) names.clear();
  }
  return SparseTensor(std::move(shape), std::move(indices), std::move(values),
                      std::move(names));
}

void write_tensor(const SparseTensor& t, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write tensor file: " + path);
  out << "#shape";
  for (std::size_t d : t.shape()) out << ' ' << d;
  out << '\n';
  char buf[64];
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    for (std::size_t m = 0; m < t.order(); ++m) out << t.index(e, m) << ' ';
    std::snprintf(buf, sizeof buf, "%.17g", t.value(e));
    out << buf << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path);
  if (!t.mode_names().empty()) {
    std::ofstream modes(path + ".modes");
    for (const auto& nm : t.mode_names()) modes << nm << '\n';
  }
}

std::uint64_t tensor_wire_bytes(const SparseTensor& t) {
  return static_cast<std::uint64_t>(t.nnz()) * (4ull * t.order() + 8ull);
}

}  // namespace trip
