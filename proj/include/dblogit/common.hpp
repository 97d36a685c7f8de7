#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace dblogit {

// All recoverable failures in the library throw Error with a message that
// names the module/stage where the failure occurred.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// SplitMix64 finalizer. Derives decorrelated substream seeds from
// (seed, index) so replicate/draw streams are independent of scheduling.
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t index = 0) {
  return Rng(mix_seed(seed, index));
}

inline double expit(double u) {
  if (u >= 0) {
    return 1.0 / (1.0 + std::exp(-u));
  }
  const double e = std::exp(u);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

// log(1 + e^u) without overflow.
inline double log1pexp(double u) {
  if (u > 37.0) return u;
  return std::log1p(std::exp(u));
}

double std_normal_cdf(double x);

// Inverse standard normal CDF (Acklam's rational approximation polished
// with one Halley step; ~1e-15 absolute accuracy).
double std_normal_quantile(double p);

}  // namespace dblogit
