// Deterministic random streams. Every random draw in the project comes from
// one master seed fanned out into named sub-streams, so any value consumed at
// step t is a pure function of (seed, tag, indices) and never of code paths
// executed earlier. Distributions are hand-rolled (no std::*_distribution)
// to keep streams identical across standard libraries.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace adavae {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Sub-stream seed keyed by a tag plus up to two indices (step, item, ...).
inline std::uint64_t substream(std::uint64_t seed, std::string_view tag,
                               std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t s = seed ^ fnv1a(tag);
  std::uint64_t h = splitmix64(s);
  s ^= 0x9e3779b97f4a7c15ull + a;
  h ^= splitmix64(s);
  s ^= 0xc2b2ae3d27d4eb4full + b;
  h ^= splitmix64(s);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() {
    return (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
  double gauss() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double gauss(double mean, double sd) { return mean + sd * gauss(); }

  std::vector<double> gauss_vec(std::size_t n, double mean = 0.0,
                                double sd = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = gauss(mean, sd);
    return v;
  }

  // Uniform integer in [0, n); rejection sampling, unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  // Fisher-Yates; fixed algorithm rather than std::shuffle, which is
  // implementation-defined.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static constexpr double kPi = 3.14159265358979323846264338327950288;
  std::mt19937_64 eng_;
};

}  // namespace adavae
