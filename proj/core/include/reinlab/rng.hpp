#pragma once

#include <cstdint>
#include <string_view>

#include "reinlab/scalar.hpp"

REINLAB_NAMESPACE_BEGIN

// Small deterministic generator (splitmix64). All distributions are
// implemented here so that streams are bit-identical across standard
// libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  // Standard normal scaled by sigma, redrawn outside [-2 sigma, 2 sigma].
  double truncated_normal(double sigma);
  bool bernoulli(double p) { return uniform01() < p; }

  // Independent child stream keyed by a label; does not advance this stream.
  Rng fork(std::string_view label) const;

 private:
  std::uint64_t state_;
};

std::uint64_t hash_label(std::string_view label);

REINLAB_NAMESPACE_END
