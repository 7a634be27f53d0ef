#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reinlab/model.hpp"

REINLAB_NAMESPACE_BEGIN

struct GradcheckEntry {
  std::string name;
  Component component = Component::adapter;
  std::size_t scalars = 0;
  double max_relative_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_relative_error = 0.0;
};

// N=2, c=8, m=4, r=2, c'=4, n=4 patches of a 4x4 image, K=3.
ModelConfig gradcheck_toy_config();

// Compares tape gradients of the segmentation loss against central
// differences for every trainable tensor of a model built from `config`.
// Trainable parameters are first perturbed away from their initialization so
// that zero-initialized maps carry gradient through every path. Meaningful in
// double precision.
GradcheckReport model_gradcheck(const ModelConfig& config, std::uint64_t seed, double step = 1e-4);

REINLAB_NAMESPACE_END
