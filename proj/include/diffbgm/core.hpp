#pragma once

// Shared small types: dense row-major tensor of doubles and seeded RNG helpers.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace diffbgm {

struct Tensor {
  std::vector<std::size_t> dims;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> d, double fill = 0.0)
      : dims(std::move(d)),
        v(std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                          std::multiplies<>()),
          fill) {}

  std::size_t size() const { return v.size(); }
  std::size_t rank() const { return dims.size(); }

  // 2-D accessors (row-major)
  double& at(std::size_t i, std::size_t j) { return v[i * dims[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * dims[1] + j]; }
  // 3-D accessors
  double& at(std::size_t c, std::size_t t, std::size_t p) {
    return v[(c * dims[1] + t) * dims[2] + p];
  }
  double at(std::size_t c, std::size_t t, std::size_t p) const {
    return v[(c * dims[1] + t) * dims[2] + p];
  }

  bool same_shape(const Tensor& o) const { return dims == o.dims; }
};

inline bool all_finite(const Tensor& t) {
  for (double x : t.v)
    if (!std::isfinite(x)) return false;
  return true;
}

// Deterministic generator used everywhere randomness is needed. mt19937_64
// plus our own normal transform keeps sequences identical across platforms
// (std::normal_distribution is implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  double uniform() {
    // 53-bit uniform in [0,1)
    return (eng_() >> 11) * (1.0 / 9007199254740992.0);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    std::uint64_t lim = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= lim);
    return x % n;
  }

  std::uint64_t raw() { return eng_(); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Stable sub-seed derivation (splitmix64 over the pair).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace diffbgm
