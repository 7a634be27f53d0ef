#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "reinlab/parameters.hpp"
#include "reinlab/tensor.hpp"

REINLAB_NAMESPACE_BEGIN

struct ViTConfig {
  std::size_t image_size = 64;
  std::size_t patch_size = 8;
  std::size_t depth = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  // 1-based, strictly increasing, last == depth.
  std::vector<std::size_t> tap_layers = {1, 2, 3, 4};

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t num_patches() const { return grid() * grid(); }
  std::size_t patch_dim() const { return 3 * patch_size * patch_size; }
  std::size_t hidden_dim() const { return dim * mlp_ratio; }

  // Throws ConfigError.
  void validate() const;

  // {1..N} for N <= 4, otherwise {N/3, N/2, 2N/3, N}; gives {8, 12, 16, 24}
  // for a 24-layer encoder.
  static std::vector<std::size_t> default_taps(std::size_t depth);
};

struct EncoderLayer {
  Tensor ln1_gamma, ln1_beta;
  Tensor qkv_weight, qkv_bias;
  Tensor proj_weight, proj_bias;
  Tensor ln2_gamma, ln2_beta;
  Tensor fc1_weight, fc1_bias;
  Tensor fc2_weight, fc2_bias;
};

// Maps (1-based layer index, f_i) to the refinement delta for that layer.
using RefineHook = std::function<Tensor(std::size_t layer, const Tensor& features)>;

struct BackboneOutput {
  // Refined features f_i + delta_i at the configured tap layers.
  std::vector<Tensor> taps;
  // f_N + delta_N
  Tensor output;
};

// Rearranges a [3 x H x W] image into [n x 3*p*p] patch rows in raster order.
Tensor patchify(const Tensor& image, std::size_t patch_size);

// Plain pre-norm vision transformer without a class token.
class ViTBackbone {
 public:
  ViTBackbone(const ViTConfig& config, std::uint64_t seed);

  const ViTConfig& config() const { return config_; }

  // [3 x H x W] -> [n x c], positional embedding included.
  Tensor patch_embed(const Tensor& image) const;
  // Applies encoder layer L_i (1-based).
  Tensor layer_forward(std::size_t layer, const Tensor& x) const;
  // f_1 = L_1(Embed(x)), f_{i+1} = L_{i+1}(f_i + delta_i), f_out = f_N + delta_N.
  BackboneOutput forward(const Tensor& image, const RefineHook& hook = {}) const;

  void set_frozen(bool frozen);
  bool frozen() const { return frozen_; }

  std::vector<NamedParameter> named_parameters() const;

 private:
  ViTConfig config_;
  Tensor patch_weight_, patch_bias_, pos_embed_;
  std::vector<EncoderLayer> layers_;
  bool frozen_ = false;
};

REINLAB_NAMESPACE_END
