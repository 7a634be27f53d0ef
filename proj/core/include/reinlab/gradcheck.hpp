#pragma once

#include <functional>
#include <span>

#include "reinlab/tensor.hpp"

REINLAB_NAMESPACE_BEGIN

// Central-difference estimate (f(x + h e_i) - f(x - h e_i)) / 2h for every
// coordinate of x. x is perturbed in place and restored before returning.
// Throws NumericError if f returns a non-finite value.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor& x,
                                  double h);

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
double max_relative_error(std::span<const Scalar> a, std::span<const Scalar> b,
                          double floor = 1e-8);

REINLAB_NAMESPACE_END
