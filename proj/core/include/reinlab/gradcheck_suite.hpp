#pragma once

// Precision-neutral entry point to the double-precision gradient check, so
// float builds can run it without sharing a translation unit with the double
// library.

#include <cstdint>
#include <string>
#include <vector>

namespace reinlab {

struct GradcheckSuiteEntry {
  std::string config;  // variant label of the toy model
  std::string name;
  std::string component;
  std::size_t scalars = 0;
  double max_relative_error = 0.0;
};

struct GradcheckSuiteResult {
  std::vector<GradcheckSuiteEntry> entries;
  double max_relative_error = 0.0;
};

// Toy models (N=2, c=8, m=4, r=2, c'=4, n=4, K=3) in three adapter layouts:
// low-rank shared tokens, full per-layer tokens, and no query link.
GradcheckSuiteResult run_gradcheck_suite(std::uint64_t seed, double step = 1e-4);

}  // namespace reinlab
