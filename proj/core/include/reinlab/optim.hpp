#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "reinlab/parameters.hpp"

REINLAB_NAMESPACE_BEGIN

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

struct AdamWState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;
};

// One AdamW update: p <- p * (1 - lr * wd), then the bias-corrected Adam
// step. State buffers are sized on first use. Throws NumericError naming
// `name` if a gradient is not finite.
void adamw_step(std::span<Scalar> params, std::span<const Scalar> grads, AdamWState& state,
                const AdamWOptions& options, const std::string& name = "<tensor>");

// Applies adamw_step to a set of parameters, each with its own learning rate.
class AdamW {
 public:
  explicit AdamW(AdamWOptions defaults) : defaults_(defaults) {}

  void add(const NamedParameter& param, double lr);

  // Parameters without an accumulated gradient are treated as having a zero
  // gradient.
  void step();
  void zero_grad();

  std::size_t size() const { return slots_.size(); }
  bool tracks(const std::string& name) const;

 private:
  struct Slot {
    NamedParameter param;
    AdamWOptions options;
    AdamWState state;
  };
  AdamWOptions defaults_;
  std::vector<Slot> slots_;
};

REINLAB_NAMESPACE_END
