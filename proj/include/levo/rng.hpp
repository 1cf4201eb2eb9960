#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace levo {

// Counter-based generator: output i is a pure function of (key, i). Handles
// are passed explicitly; there is no global generator anywhere in the library.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(mix(key ^ 0x9E3779B97F4A7C15ull)) {}

  std::uint64_t next_u64() { return mix(key_ + 0xD1B54A32D192ED03ull * ++counter_); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; one draw per call so the stream position stays predictable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t counter() const { return counter_; }

  // Independent child stream, e.g. one per song or per training step.
  Rng derive(std::uint64_t stream) const { return Rng(key_ ^ mix(stream + 0x632BE59BD9B4E019ull)); }

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = Rng::mix(seed + 0x243F6A8885A308D3ull);
  for (auto p : path) s = Rng::mix(s ^ (p + 0x9E3779B97F4A7C15ull + (s << 6) + (s >> 2)));
  return s;
}

}  // namespace levo
