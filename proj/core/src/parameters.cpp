#include "reinlab/parameters.hpp"

#include <cstdio>

REINLAB_NAMESPACE_BEGIN

std::string_view component_name(Component c) {
  switch (c) {
    case Component::backbone:
      return "backbone";
    case Component::adapter:
      return "adapter";
    case Component::head:
      return "head";
  }
  return "unknown";
}

std::optional<Component> parse_component(std::string_view name) {
  if (name == "backbone") return Component::backbone;
  if (name == "adapter") return Component::adapter;
  if (name == "head") return Component::head;
  return std::nullopt;
}

Tensor uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.uniform(-bound, bound));
  return t;
}

Tensor truncated_normal_tensor(Shape shape, double sigma, Rng& rng, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = static_cast<Scalar>(rng.truncated_normal(sigma));
  return t;
}

std::string layer_tag(std::size_t layer) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "layer%02zu", layer);
  return buf;
}

REINLAB_NAMESPACE_END
