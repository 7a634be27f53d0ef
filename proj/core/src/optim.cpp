#include "reinlab/optim.hpp"

#include <cmath>

#include "reinlab/errors.hpp"

REINLAB_NAMESPACE_BEGIN

void adamw_step(std::span<Scalar> params, std::span<const Scalar> grads, AdamWState& state,
                const AdamWOptions& options, const std::string& name) {
  if (!grads.empty() && grads.size() != params.size()) {
    throw ShapeError("adamw_step: gradient of " + name + " has " + std::to_string(grads.size()) +
                     " entries for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adamw_step: non-finite gradient in " + name + " at index " +
                         std::to_string(i));
    }
  }
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  } else if (state.m.size() != params.size()) {
    throw ShapeError("adamw_step: optimizer state of " + name + " does not match parameters");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(options.beta1, t);
  const double bc2 = 1.0 - std::pow(options.beta2, t);
  const double decay = 1.0 - options.lr * options.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads.empty() ? 0.0 : static_cast<double>(grads[i]);
    state.m[i] = options.beta1 * state.m[i] + (1.0 - options.beta1) * g;
    state.v[i] = options.beta2 * state.v[i] + (1.0 - options.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    double p = static_cast<double>(params[i]) * decay;
    p -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    params[i] = static_cast<Scalar>(p);
  }
}

void AdamW::add(const NamedParameter& param, double lr) {
  if (!param.tensor.requires_grad()) {
    throw ContractError("AdamW: parameter " + param.name + " does not require gradients");
  }
  AdamWOptions options = defaults_;
  options.lr = lr;
  slots_.push_back({param, options, {}});
}

void AdamW::step() {
  for (auto& slot : slots_) {
    adamw_step(slot.param.tensor.data(), slot.param.tensor.grad(), slot.state, slot.options,
               slot.param.name);
  }
}

void AdamW::zero_grad() {
  for (auto& slot : slots_) slot.param.tensor.zero_grad();
}

bool AdamW::tracks(const std::string& name) const {
  for (const auto& slot : slots_) {
    if (slot.param.name == name) return true;
  }
  return false;
}

REINLAB_NAMESPACE_END
