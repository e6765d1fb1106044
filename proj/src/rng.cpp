#include "hds/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace hds {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

Rng Rng::derive(std::uint64_t seed, const std::string& purpose) {
  return Rng(seed ^ fnv1a64(purpose));
}

double Rng::normal() {
  // Box-Muller, cosine branch only; u1 nudged away from 0.
  double u1 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // rejection sampling to avoid modulo bias
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

Tensor Rng::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal();
  return t;
}

Tensor Rng::uniform_tensor(Shape shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * uniform();
  return t;
}

std::string Rng::state_string() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::restore_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw Error("Rng: malformed engine state string");
}

}  // namespace hds
