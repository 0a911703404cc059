#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <vector>

#include "trip/set_polynomial.hpp"
#include "trip/sparse_tensor.hpp"

namespace trip {

// Outcome of aligning one feature mode, from one hospital's point of view.
struct AlignmentResult {
  std::map<std::uint32_t, std::uint64_t> region_sizes;  // mask -> agreed size
  std::map<std::uint64_t, std::size_t> global_index;    // own element -> index
  std::size_t global_size = 0;
};

// sorted distinct observed indices of `mode`, as vocabulary elements
std::vector<std::uint64_t> observed_vocabulary(const SparseTensor& t,
                                               std::size_t mode);

// Assign each own element its region mask given the blinded pairwise sums
// from the other hospitals.  `sums[i]` is (other hospital id, polynomial).
std::map<std::uint64_t, std::uint32_t> classify_elements(
    const std::vector<std::uint64_t>& own, std::size_t self,
    std::size_t k_count,
    const std::vector<std::pair<std::size_t, SetPolynomial>>& sums);

// per-hospital region size report: every mask containing the hospital's bit
std::map<std::uint32_t, std::uint64_t> count_regions(
    const std::map<std::uint64_t, std::uint32_t>& classified, std::size_t self,
    std::size_t k_count);

// Cross-check the K hospitals' reports: every hospital whose bit is in a
// mask must report the same size for it.  Returns the merged size map
// (all non-empty masks over K hospitals, zero sizes included) or throws.
std::map<std::uint32_t, std::uint64_t> merge_region_reports(
    const std::vector<std::map<std::uint32_t, std::uint64_t>>& reports);

// Reference result computed with full plaintext knowledge: true region
// masks, canonical region order, ascending within region.  Index k of
// `vocabs` is hospital k's element list.
std::vector<AlignmentResult> plaintext_alignment(
    const std::vector<std::vector<std::uint64_t>>& vocabs);

// Remap one mode's coordinates through old-index -> new-index and resize the
// mode to new_dim.  Every observed old index must be present in the map.
SparseTensor reindex_mode(const SparseTensor& t, std::size_t mode,
                          const std::map<std::uint64_t, std::size_t>& index_map,
                          std::size_t new_dim);

}  // namespace trip
