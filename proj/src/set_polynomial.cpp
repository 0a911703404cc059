#include "trip/set_polynomial.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace trip {

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(a) * b) % p);
}

namespace {

std::uint64_t powmod(std::uint64_t a, std::uint64_t e, std::uint64_t p) {
  std::uint64_t r = 1;
  a %= p;
  while (e) {
    if (e & 1) r = mulmod(r, a, p);
    a = mulmod(a, a, p);
    e >>= 1;
  }
  return r;
}

}  // namespace

bool is_prime_u64(std::uint64_t n) {
  if (n < 2) return false;
  for (std::uint64_t q : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull,
                          23ull, 29ull, 31ull, 37ull}) {
    if (n == q) return true;
    if (n % q == 0) return false;
  }
  std::uint64_t d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  // this witness set is deterministic for all 64-bit integers
  for (std::uint64_t a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull,
                          23ull, 29ull, 31ull, 37ull}) {
    std::uint64_t x = powmod(a, d, n);
    if (x == 1 || x == n - 1) continue;
    bool composite = true;
    for (int i = 1; i < s; ++i) {
      x = mulmod(x, x, n);
      if (x == n - 1) {
        composite = false;
        break;
      }
    }
    if (composite) return false;
  }
  return true;
}

std::uint64_t modulus_for_attempt(int attempt) {
  // distinct primes just below 2^62, one per conflict rerun
  static constexpr std::uint64_t primes[] = {
      (1ull << 62) - 57,
      (1ull << 62) - 87,
      (1ull << 62) - 117,
      (1ull << 62) - 143,
  };
  constexpr int n = static_cast<int>(sizeof(primes) / sizeof(primes[0]));
  if (attempt < 0) throw std::invalid_argument("attempt must be >= 0");
  return primes[attempt % n];
}

std::uint64_t SetPolynomial::eval(std::uint64_t y) const {
  std::uint64_t h = 0;
  for (std::size_t i = coeffs.size(); i-- > 0;)
    h = (mulmod(h, y % modulus, modulus) + coeffs[i]) % modulus;
  return h;
}

SetPolynomial encode_set(const std::vector<std::uint64_t>& elements,
                         std::uint64_t alpha, std::uint64_t p) {
  if (!is_prime_u64(p)) throw std::invalid_argument("modulus is not prime");
  if (p >= (1ull << 63)) throw std::invalid_argument("modulus too large");
  std::unordered_set<std::uint64_t> seen;
  std::uint64_t max_element = 0;
  for (std::uint64_t y : elements) {
    if (y >= kCodeSpaceBound || y >= p)
      throw std::invalid_argument("set element outside the code space");
    if (!seen.insert(y).second)
      throw std::invalid_argument("duplicate set element");
    max_element = std::max(max_element, y);
  }
  // the blinding root must never be a representable code: with a full-width
  // modulus that means the [2^31, p) band, with a small (test) modulus it
  // just has to clear every element present
  const std::uint64_t alpha_floor =
      p > kCodeSpaceBound ? kCodeSpaceBound
                          : (elements.empty() ? 1 : max_element + 1);
  if (alpha < alpha_floor || alpha >= p)
    throw std::invalid_argument("alpha must lie above the code space, below p");

  SetPolynomial out;
  out.modulus = p;
  out.coeffs = {1};  // start from the monic constant polynomial
  auto mul_root = [&](std::uint64_t root) {
    const std::uint64_t neg = (p - root % p) % p;
    std::vector<std::uint64_t> next(out.coeffs.size() + 1, 0);
    for (std::size_t i = 0; i < out.coeffs.size(); ++i) {
      next[i + 1] = (next[i + 1] + out.coeffs[i]) % p;
      next[i] = (next[i] + mulmod(out.coeffs[i], neg, p)) % p;
    }
    out.coeffs = std::move(next);
  };
  mul_root(alpha);
  for (std::uint64_t y : elements) mul_root(y);
  return out;
}

SetPolynomial pairwise_sum(const SetPolynomial& a, const SetPolynomial& b) {
  if (a.modulus != b.modulus)
    throw std::invalid_argument("pairwise_sum: modulus mismatch");
  SetPolynomial out;
  out.modulus = a.modulus;
  out.coeffs.resize(std::max(a.coeffs.size(), b.coeffs.size()), 0);
  for (std::size_t i = 0; i < a.coeffs.size(); ++i) out.coeffs[i] = a.coeffs[i];
  for (std::size_t i = 0; i < b.coeffs.size(); ++i)
    out.coeffs[i] = (out.coeffs[i] + b.coeffs[i]) % out.modulus;
  return out;
}

bool membership_test(const SetPolynomial& sum, std::uint64_t y) {
  return sum.eval(y) == 0;
}

std::uint32_t region_bit(std::size_t hospital, std::size_t k_count) {
  if (hospital >= k_count) throw std::invalid_argument("hospital id out of range");
  if (k_count > 16) throw std::invalid_argument("region masks support at most 16 parties");
  return 1u << (k_count - 1 - hospital);
}

std::vector<std::uint32_t> canonical_region_order(std::size_t k_count) {
  if (k_count == 0 || k_count > 16)
    throw std::invalid_argument("k_count must be in [1, 16]");
  std::vector<std::uint32_t> masks;
  const std::uint32_t top = (1u << k_count) - 1;
  masks.reserve(top);
  for (std::uint32_t m = top; m >= 1; --m) masks.push_back(m);
  return masks;
}

std::map<std::uint64_t, std::size_t> build_global_order(
    const std::map<std::uint32_t, std::uint64_t>& region_sizes,
    const std::map<std::uint64_t, std::uint32_t>& own_elements) {
  // canonical order = descending mask; offsets by prefix sums
  std::map<std::uint32_t, std::size_t> offset;
  std::size_t at = 0;
  for (auto it = region_sizes.rbegin(); it != region_sizes.rend(); ++it) {
    offset[it->first] = at;
    at += static_cast<std::size_t>(it->second);
  }
  // group own elements per region; std::map iterates elements ascending
  std::map<std::uint32_t, std::size_t> placed;
  std::map<std::uint64_t, std::size_t> out;
  for (const auto& [elem, mask] : own_elements) {
    auto off = offset.find(mask);
    if (off == offset.end())
      throw std::runtime_error("element assigned to an unknown region");
    const std::size_t rank = placed[mask]++;
    out[elem] = off->second + rank;
  }
  for (const auto& [mask, count] : placed) {
    auto it = region_sizes.find(mask);
    if (it == region_sizes.end() || count > it->second)
      throw std::runtime_error("region occupancy exceeds the agreed size");
  }
  return out;
}

}  // namespace trip
