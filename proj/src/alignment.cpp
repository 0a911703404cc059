#include "trip/alignment.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace trip {

std::vector<std::uint64_t> observed_vocabulary(const SparseTensor& t,
                                               std::size_t mode) {
  if (mode >= t.order()) throw std::invalid_argument("mode out of range");
  std::set<std::uint64_t> seen;
  for (std::size_t e = 0; e < t.nnz(); ++e) seen.insert(t.index(e, mode));
  return {seen.begin(), seen.end()};
}

std::map<std::uint64_t, std::uint32_t> classify_elements(
    const std::vector<std::uint64_t>& own, std::size_t self,
    std::size_t k_count,
    const std::vector<std::pair<std::size_t, SetPolynomial>>& sums) {
  const std::uint32_t self_bit = region_bit(self, k_count);
  std::map<std::uint64_t, std::uint32_t> out;
  for (std::uint64_t y : own) {
    std::uint32_t mask = self_bit;
    for (const auto& [other, poly] : sums) {
      if (other == self) throw std::invalid_argument("pairwise sum with self");
      if (membership_test(poly, y)) mask |= region_bit(other, k_count);
    }
    out[y] = mask;
  }
  return out;
}

std::map<std::uint32_t, std::uint64_t> count_regions(
    const std::map<std::uint64_t, std::uint32_t>& classified, std::size_t self,
    std::size_t k_count) {
  const std::uint32_t self_bit = region_bit(self, k_count);
  std::map<std::uint32_t, std::uint64_t> out;
  // report every region the hospital belongs to, including empty ones
  const std::uint32_t top = (1u << k_count) - 1;
  for (std::uint32_t mask = 1; mask <= top; ++mask)
    if (mask & self_bit) out[mask] = 0;
  for (const auto& [elem, mask] : classified) {
    (void)elem;
    ++out.at(mask);
  }
  return out;
}

std::map<std::uint32_t, std::uint64_t> merge_region_reports(
    const std::vector<std::map<std::uint32_t, std::uint64_t>>& reports) {
  const std::size_t k = reports.size();
  if (k == 0) throw std::invalid_argument("no reports to merge");
  const std::uint32_t top = (1u << k) - 1;
  std::map<std::uint32_t, std::uint64_t> merged;
  for (std::uint32_t mask = 1; mask <= top; ++mask) {
    bool have = false;
    std::uint64_t size = 0;
    for (std::size_t h = 0; h < k; ++h) {
      if (!(mask & region_bit(h, k))) continue;
      auto it = reports[h].find(mask);
      if (it == reports[h].end())
        throw std::runtime_error("region report missing a mask");
      if (!have) {
        size = it->second;
        have = true;
      } else if (it->second != size) {
        throw std::runtime_error("region size reports disagree");
      }
    }
    merged[mask] = size;  // masks with no member bits cannot occur (mask >= 1)
  }
  return merged;
}

std::vector<AlignmentResult> plaintext_alignment(
    const std::vector<std::vector<std::uint64_t>>& vocabs) {
  const std::size_t k = vocabs.size();
  if (k == 0 || k > 16) throw std::invalid_argument("need 1..16 vocabularies");
  // true mask per element
  std::map<std::uint64_t, std::uint32_t> mask_of;
  for (std::size_t h = 0; h < k; ++h)
    for (std::uint64_t y : vocabs[h]) mask_of[y] |= region_bit(h, k);

  std::map<std::uint32_t, std::uint64_t> sizes;
  const std::uint32_t top = (1u << k) - 1;
  for (std::uint32_t mask = 1; mask <= top; ++mask) sizes[mask] = 0;
  for (const auto& [y, mask] : mask_of) {
    (void)y;
    ++sizes[mask];
  }

  std::size_t total = 0;
  for (const auto& [mask, sz] : sizes) {
    (void)mask;
    total += static_cast<std::size_t>(sz);
  }

  std::vector<AlignmentResult> out(k);
  for (std::size_t h = 0; h < k; ++h) {
    std::map<std::uint64_t, std::uint32_t> own;
    for (std::uint64_t y : vocabs[h]) own[y] = mask_of[y];
    out[h].region_sizes = sizes;
    out[h].global_index = build_global_order(sizes, own);
    out[h].global_size = total;
  }
  return out;
}

SparseTensor reindex_mode(const SparseTensor& t, std::size_t mode,
                          const std::map<std::uint64_t, std::size_t>& index_map,
                          std::size_t new_dim) {
  if (mode >= t.order()) throw std::invalid_argument("mode out of range");
  std::vector<std::size_t> shape = t.shape();
  shape[mode] = new_dim;
  std::vector<std::uint32_t> idx = t.flat_indices();
  const std::size_t n = t.order();
  for (std::size_t e = 0; e < t.nnz(); ++e) {
    auto it = index_map.find(idx[e * n + mode]);
    if (it == index_map.end())
      throw std::runtime_error("reindex: observed index missing from the map");
    if (it->second >= new_dim)
      throw std::runtime_error("reindex: mapped index out of bounds");
    idx[e * n + mode] = static_cast<std::uint32_t>(it->second);
  }
  return SparseTensor(std::move(shape), std::move(idx),
                      std::vector<double>(t.values()), t.mode_names());
}

}  // namespace trip
