#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace minielm {

// Deterministic RNG wrapper. std::mt19937_64 output is fully specified by the
// standard; all floating-point and bounded-integer draws below are derived
// from raw engine words so sequences are identical across compilers.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased index in [0, n) via rejection sampling.
  size_t index(size_t n) {
    if (n <= 1) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<size_t>(x % n);
  }

  // Draws one category from an unnormalized non-negative weight vector.
  int32_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < weights.size(); ++i) {
      acc += weights[i];
      if (u < acc) return static_cast<int32_t>(i);
    }
    return static_cast<int32_t>(weights.size()) - 1;
  }

  // Fisher-Yates with the unbiased index() above (std::shuffle is
  // implementation-defined and would break cross-toolchain determinism).
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

inline uint64_t fnv1a64(std::string_view bytes, uint64_t h = 14695981039346656037ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Named sub-stream seeds so independent pipeline stages never share state.
inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
  return splitmix64(master ^ fnv1a64(tag));
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
  return splitmix64(derive_seed(master, tag) + 0x9e3779b97f4a7c15ull * (index + 1));
}

}  // namespace minielm
