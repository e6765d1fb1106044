#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hds/tensor.hpp"

namespace hds {

/// Deterministic random stream. All transforms (uniform, Box-Muller normal,
/// bounded integers, shuffles) are implemented here rather than with
/// std::*_distribution so that sequences are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent substream keyed by purpose string.
  static Rng derive(std::uint64_t seed, const std::string& purpose);

  std::uint64_t raw() { return engine_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (two uniforms per draw).
  double normal();

  double normal(double mean, double std) { return mean + std * normal(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Tensor normal_tensor(Shape shape);
  Tensor uniform_tensor(Shape shape, double lo, double hi);

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

  std::string state_string() const;
  void restore_state(const std::string& s);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t fnv1a64(const std::string& s);

}  // namespace hds
