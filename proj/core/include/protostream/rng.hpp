#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace protostream {

// All randomness in the project flows from one master seed through named
// substreams, so that e.g. adding a draw to the sampler can never shift the
// stream used for weight init. Substream seeds are derived by hashing the
// (master, name, index) triple; the generators themselves are mt19937_64,
// which is bit-portable across platforms.
//
// The uniform/normal transforms below are hand-rolled instead of using
// std::*_distribution because the standard distributions are
// implementation-defined; these are not.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 gen_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

inline uint64_t derive_seed(uint64_t master, std::string_view name,
                            uint64_t index = 0) {
  uint64_t h = detail::splitmix64(master ^ detail::fnv1a(name));
  return detail::splitmix64(h ^ detail::splitmix64(index));
}

inline RngStream substream(uint64_t master, std::string_view name,
                           uint64_t index = 0) {
  return RngStream(derive_seed(master, name, index));
}

}  // namespace protostream
