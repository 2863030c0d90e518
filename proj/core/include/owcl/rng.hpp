#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace owcl {

// SplitMix64. Chosen over std engines because its output is bit-portable
// across platforms and standard library versions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n); rejection-free modulo is fine for the small n used here,
  // but use rejection to keep the distribution exact regardless
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  // Box-Muller, cosine branch only. std::normal_distribution is not
  // bit-portable, and checkpoints round-trip rng-derived state bitwise.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  std::uint64_t state() const { return state_; }
  void set_state(std::uint64_t s) { state_ = s; }

 private:
  std::uint64_t state_;
};

namespace detail {
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

// Every random draw in the system flows from one master seed through a named
// stream ("data", "init", "dropout", "order", ...) plus integer coordinates
// (class id, stage, epoch, sample, ...). Stateless derivation means ablation
// variants share data bit-for-bit and checkpoint resume re-derives the exact
// same draws.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream,
                                 std::initializer_list<std::uint64_t> coords = {}) {
  std::uint64_t h = detail::fnv1a64(stream);
  h = detail::mix64(h ^ master);
  for (std::uint64_t c : coords) h = detail::mix64(h ^ (c + 0x9e3779b97f4a7c15ull));
  return h;
}

inline Rng make_stream(std::uint64_t master, std::string_view stream,
                       std::initializer_list<std::uint64_t> coords = {}) {
  return Rng(derive_seed(master, stream, coords));
}

}  // namespace owcl
