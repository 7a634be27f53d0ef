#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "reinlab/rng.hpp"
#include "reinlab/tensor.hpp"

REINLAB_NAMESPACE_BEGIN

// Ownership tag of a model tensor. Values are part of the checkpoint format.
enum class Component : std::uint8_t { backbone = 0, adapter = 1, head = 2 };

std::string_view component_name(Component c);
std::optional<Component> parse_component(std::string_view name);

struct NamedParameter {
  std::string name;
  Tensor tensor;
  Component component;
};

// Tensor with entries drawn from U(-bound, bound).
Tensor uniform_tensor(Shape shape, double bound, Rng& rng, bool requires_grad = false);
// Truncated normal (cut at two sigma).
Tensor truncated_normal_tensor(Shape shape, double sigma, Rng& rng, bool requires_grad = false);

// "layer07" style zero-padded, 1-based layer tag used in tensor names.
std::string layer_tag(std::size_t layer);

REINLAB_NAMESPACE_END
