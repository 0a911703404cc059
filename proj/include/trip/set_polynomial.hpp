#pragma once

#include <cstdint>
#include <map>
#include <vector>

namespace trip {

// Vocabulary elements are integer codes below this bound; blinding roots are
// drawn at or above it, so a blinded-root coincidence with a real code is
// impossible and summed polynomials admit no false positives.
inline constexpr std::uint64_t kCodeSpaceBound = 1ull << 31;

// default field modulus (prime); alternates are used on conflict reruns
inline constexpr std::uint64_t kDefaultModulus = (1ull << 62) - 57;

bool is_prime_u64(std::uint64_t n);  // deterministic Miller-Rabin
std::uint64_t modulus_for_attempt(int attempt);

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p);

// Monic polynomial over F_p, coefficients in ascending degree order.
struct SetPolynomial {
  std::uint64_t modulus = kDefaultModulus;
  std::vector<std::uint64_t> coeffs;  // coeffs[i] multiplies y^i

  std::size_t degree() const { return coeffs.empty() ? 0 : coeffs.size() - 1; }
  std::uint64_t eval(std::uint64_t y) const;  // Horner, mod `modulus`

  bool operator==(const SetPolynomial& o) const {
    return modulus == o.modulus && coeffs == o.coeffs;
  }
};

// (y - alpha) * prod_i (y - y_i) over F_p.  Elements must be distinct and
// below both kCodeSpaceBound and p.  The blinding root alpha must sit above
// every element and below p; for production-sized p (> kCodeSpaceBound) it
// must sit in [kCodeSpaceBound, p), keeping it outside the code space.
SetPolynomial encode_set(const std::vector<std::uint64_t>& elements,
                         std::uint64_t alpha, std::uint64_t p);

// coefficient-wise sum; moduli must match
SetPolynomial pairwise_sum(const SetPolynomial& a, const SetPolynomial& b);

// whether y (an element of the caller's own set) is a root of the summed
// polynomial, i.e. lies in the other party's set as well
bool membership_test(const SetPolynomial& sum, std::uint64_t y);

// Region labels: bit (K-1-k) set means hospital k holds the element, so
// sorting masks as plain integers descending yields the canonical region
// order (all-hospitals region first, pivot-hospital-heavy regions earlier).
std::uint32_t region_bit(std::size_t hospital, std::size_t k_count);

// canonical ordering of all non-empty masks for K hospitals
std::vector<std::uint32_t> canonical_region_order(std::size_t k_count);

// Deterministic global indexing from shared region sizes.  `own_elements`
// maps each of the caller's elements to its region mask; `region_sizes` maps
// every mask (over all K hospitals) to its agreed size.  Elements are placed
// region by region in canonical order, ascending within a region.
std::map<std::uint64_t, std::size_t> build_global_order(
    const std::map<std::uint32_t, std::uint64_t>& region_sizes,
    const std::map<std::uint64_t, std::uint32_t>& own_elements);

}  // namespace trip
