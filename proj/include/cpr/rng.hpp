#pragma once

// Deterministic random streams. All transforms (uniform, normal, shuffle)
// are implemented by hand on top of mt19937_64 so that results are
// bit-identical across platforms and standard library versions.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cpr {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // standard normal via Box-Muller; the spare value is cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u in (0, 1] avoids log(0)
    double u = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double v = uniform01();
    double r = std::sqrt(-2.0 * std::log(u));
    double a = 2.0 * 3.14159265358979323846 * v;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform01() < p; }

  // [0, n); modulo bias is irrelevant at these scales
  uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

  template <class T>
  void shuffle(std::vector<T>& xs) {
    for (size_t i = xs.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(xs[i - 1], xs[j]);
    }
  }

  std::vector<size_t> permutation(size_t n) {
    std::vector<size_t> p(n);
    for (size_t i = 0; i < n; ++i) p[i] = i;
    shuffle(p);
    return p;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Named sub-stream derivation: all randomness in the artifact flows from a
// single master seed through (name, index) streams.
inline uint64_t derive_seed(uint64_t master, std::string_view name, uint64_t index = 0) {
  uint64_t s = master ^ (0x6a09e667f3bcc909ULL + fnv1a64(name));
  splitmix64(s);
  s ^= 0x3c6ef372fe94f82bULL * (index + 1);
  return splitmix64(s);
}

inline Rng derive_stream(uint64_t master, std::string_view name, uint64_t index = 0) {
  return Rng(derive_seed(master, name, index));
}

}  // namespace cpr
