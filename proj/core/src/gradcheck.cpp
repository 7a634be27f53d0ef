#include "reinlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "reinlab/errors.hpp"

REINLAB_NAMESPACE_BEGIN

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor& x,
                                  double h) {
  if (!(h > 0.0)) throw ContractError("finite_difference_gradient: step must be positive");
  Tensor grad(x.shape());
  auto values = x.data();
  auto out = grad.data();
  auto eval = [&] {
    const double y = f(x);
    if (!std::isfinite(y)) throw NumericError("finite_difference_gradient: non-finite f(x)");
    return y;
  };
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Scalar saved = values[i];
    values[i] = static_cast<Scalar>(saved + h);
    const double up = eval();
    values[i] = static_cast<Scalar>(saved - h);
    const double down = eval();
    values[i] = saved;
    out[i] = static_cast<Scalar>((up - down) / (2.0 * h));
  }
  return grad;
}

double max_relative_error(std::span<const Scalar> a, std::span<const Scalar> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

REINLAB_NAMESPACE_END
