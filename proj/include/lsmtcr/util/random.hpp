#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <utility>
#include <vector>

namespace lsmtcr {

/// Deterministic random source. Built on mt19937_64, whose output sequence is
/// fixed by the standard, with hand-rolled distributions so that draws do not
/// depend on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal();

  /// Unbiased integer in [0, n).
  std::size_t below(std::size_t n);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Hashes a list of integers into a well-mixed seed (splitmix64 chain).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

/// Counter-based uniform on [0, 1): a pure function of (key, counter).
double hashed_uniform(std::uint64_t key, std::uint64_t counter);

}  // namespace lsmtcr
