#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace trip {

// Coordinate-format sparse tensor.  Entries are canonicalised on
// construction: duplicate indices are summed, zero values dropped, and the
// remaining entries sorted lexicographically by index.  Mode 0 is the
// patient mode by convention; the remaining modes are feature modes.
class SparseTensor {
 public:
  SparseTensor() = default;

  // `flat_indices` holds nnz * order coordinates, entry-major.
  SparseTensor(std::vector<std::size_t> shape,
               std::vector<std::uint32_t> flat_indices,
               std::vector<double> values,
               std::vector<std::string> mode_names = {});

  std::size_t order() const { return shape_.size(); }
  std::size_t nnz() const { return values_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t mode) const { return shape_[mode]; }

  // product of all dimensions (number of cells in the dense grid)
  double cell_count() const;

  std::uint32_t index(std::size_t entry, std::size_t mode) const {
    return indices_[entry * order() + mode];
  }
  double value(std::size_t entry) const { return values_[entry]; }

  const std::vector<std::uint32_t>& flat_indices() const { return indices_; }
  const std::vector<double>& values() const { return values_; }

  const std::vector<std::string>& mode_names() const { return mode_names_; }
  void set_mode_names(std::vector<std::string> names);

  // sum of squared entry values
  double sum_squares() const;

  bool operator==(const SparseTensor& o) const {
    return shape_ == o.shape_ && indices_ == o.indices_ && values_ == o.values_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<std::uint32_t> indices_;  // nnz * order, entry-major
  std::vector<double> values_;
  std::vector<std::string> mode_names_;
};

// Text round-trip.  Format: a `#shape I1 ... IN` header line, then one entry
// per line as `i1 ... iN value`; other lines starting with '#' are comments.
// Mode names, when present, travel in a `<path>.modes` sidecar.
SparseTensor read_tensor(const std::string& path);
void write_tensor(const SparseTensor& t, const std::string& path);

// serialized size in bytes of the binary entry encoding (used to account
// for "upload the raw data" style transfers): order*4 + 8 per entry
std::uint64_t tensor_wire_bytes(const SparseTensor& t);

}  // namespace trip
