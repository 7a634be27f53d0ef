#include "reinlab/vit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reinlab/errors.hpp"
#include "reinlab/ops.hpp"

REINLAB_NAMESPACE_BEGIN

void ViTConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size " + std::to_string(image_size) +
                      " must be a positive multiple of patch_size " + std::to_string(patch_size));
  }
  if (depth == 0) throw ConfigError("depth must be positive");
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("dim " + std::to_string(dim) + " must be divisible by heads " +
                      std::to_string(heads));
  }
  if (mlp_ratio == 0) throw ConfigError("mlp_ratio must be positive");
  if (tap_layers.empty()) throw ConfigError("tap_layers must not be empty");
  for (std::size_t i = 0; i < tap_layers.size(); ++i) {
    if (tap_layers[i] < 1 || tap_layers[i] > depth) {
      throw ConfigError("tap layer " + std::to_string(tap_layers[i]) + " outside [1, " +
                        std::to_string(depth) + "]");
    }
    if (i > 0 && tap_layers[i] <= tap_layers[i - 1]) {
      throw ConfigError("tap_layers must be strictly increasing");
    }
  }
  if (tap_layers.back() != depth) throw ConfigError("last tap layer must equal depth");
}

std::vector<std::size_t> ViTConfig::default_taps(std::size_t depth) {
  std::vector<std::size_t> taps;
  if (depth <= 4) {
    for (std::size_t i = 1; i <= depth; ++i) taps.push_back(i);
    return taps;
  }
  for (std::size_t t : {depth / 3, depth / 2, 2 * depth / 3, depth}) {
    if (t >= 1 && (taps.empty() || t > taps.back())) taps.push_back(t);
  }
  return taps;
}

Tensor patchify(const Tensor& image, std::size_t patch_size) {
  if (image.ndim() != 3 || image.dim(0) != 3) {
    throw ShapeError("expected a [3 x H x W] image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  if (h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("image " + shape_string(image.shape()) + " not divisible into " +
                     std::to_string(patch_size) + "-pixel patches");
  }
  const std::size_t gh = h / patch_size, gw = w / patch_size;
  const std::size_t pd = 3 * patch_size * patch_size;
  Tensor out({gh * gw, pd});
  auto src = image.data();
  auto dst = out.data();
  for (std::size_t gy = 0; gy < gh; ++gy) {
    for (std::size_t gx = 0; gx < gw; ++gx) {
      Scalar* row = dst.data() + (gy * gw + gx) * pd;
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        for (std::size_t dy = 0; dy < patch_size; ++dy) {
          for (std::size_t dx = 0; dx < patch_size; ++dx) {
            row[k++] = src[(ch * h + gy * patch_size + dy) * w + gx * patch_size + dx];
          }
        }
      }
    }
  }
  return out;
}

namespace {

Tensor xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return uniform_tensor({fan_in, fan_out}, std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)),
                        rng, true);
}

Tensor zeros_vec(std::size_t n) { return Tensor({n}, true); }

Tensor ones_vec(std::size_t n) {
  Tensor t = Tensor::full({n}, Scalar(1));
  t.set_requires_grad(true);
  return t;
}

}  // namespace

ViTBackbone::ViTBackbone(const ViTConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng(seed).fork("vit");
  const std::size_t c = config_.dim, hd = config_.hidden_dim();
  patch_weight_ = xavier(config_.patch_dim(), c, rng);
  patch_bias_ = zeros_vec(c);
  pos_embed_ = truncated_normal_tensor({config_.num_patches(), c}, 0.02, rng, true);
  layers_.reserve(config_.depth);
  for (std::size_t i = 0; i < config_.depth; ++i) {
    EncoderLayer layer;
    layer.ln1_gamma = ones_vec(c);
    layer.ln1_beta = zeros_vec(c);
    layer.qkv_weight = xavier(c, 3 * c, rng);
    layer.qkv_bias = zeros_vec(3 * c);
    layer.proj_weight = xavier(c, c, rng);
    layer.proj_bias = zeros_vec(c);
    layer.ln2_gamma = ones_vec(c);
    layer.ln2_beta = zeros_vec(c);
    layer.fc1_weight = xavier(c, hd, rng);
    layer.fc1_bias = zeros_vec(hd);
    layer.fc2_weight = xavier(hd, c, rng);
    layer.fc2_bias = zeros_vec(c);
    layers_.push_back(std::move(layer));
  }
}

Tensor ViTBackbone::patch_embed(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(1) != config_.image_size ||
      image.dim(2) != config_.image_size) {
    throw ShapeError("patch_embed expects [3 x " + std::to_string(config_.image_size) + " x " +
                     std::to_string(config_.image_size) + "], got " + shape_string(image.shape()));
  }
  return add(affine(patchify(image, config_.patch_size), patch_weight_, patch_bias_), pos_embed_);
}

Tensor ViTBackbone::layer_forward(std::size_t layer, const Tensor& x) const {
  if (layer < 1 || layer > layers_.size()) {
    throw ContractError("layer index " + std::to_string(layer) + " out of range");
  }
  const EncoderLayer& L = layers_[layer - 1];
  const std::size_t c = config_.dim, heads = config_.heads, dh = c / heads;
  const Scalar attn_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  Tensor h = layer_norm_rows(x, L.ln1_gamma, L.ln1_beta);
  Tensor qkv = affine(h, L.qkv_weight, L.qkv_bias);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t k = 0; k < heads; ++k) {
    Tensor q = slice_cols(qkv, k * dh, dh);
    Tensor kk = slice_cols(qkv, c + k * dh, dh);
    Tensor v = slice_cols(qkv, 2 * c + k * dh, dh);
    Tensor attn = softmax_rows(scale(matmul_nt(q, kk), attn_scale));
    head_out.push_back(matmul(attn, v));
  }
  Tensor y = add(x, affine(concat_cols(head_out), L.proj_weight, L.proj_bias));
  Tensor h2 = layer_norm_rows(y, L.ln2_gamma, L.ln2_beta);
  Tensor mlp = affine(gelu(affine(h2, L.fc1_weight, L.fc1_bias)), L.fc2_weight, L.fc2_bias);
  return add(y, mlp);
}

BackboneOutput ViTBackbone::forward(const Tensor& image, const RefineHook& hook) const {
  BackboneOutput out;
  const auto& taps = config_.tap_layers;
  std::size_t next_tap = 0;
  Tensor f = layer_forward(1, patch_embed(image));
  for (std::size_t i = 1; i <= config_.depth; ++i) {
    Tensor refined = f;
    if (hook) {
      Tensor delta = hook(i, f);
      if (!delta.defined() || delta.shape() != f.shape()) {
        throw ContractError("refinement hook returned " +
                            (delta.defined() ? shape_string(delta.shape()) : std::string("nothing")) +
                            " for layer " + std::to_string(i) + " features " +
                            shape_string(f.shape()));
      }
      refined = add(f, delta);
    }
    if (next_tap < taps.size() && taps[next_tap] == i) {
      out.taps.push_back(refined);
      ++next_tap;
    }
    if (i < config_.depth) {
      f = layer_forward(i + 1, refined);
    } else {
      out.output = refined;
    }
  }
  return out;
}

void ViTBackbone::set_frozen(bool frozen) {
  frozen_ = frozen;
  for (auto& p : named_parameters()) p.tensor.set_requires_grad(!frozen);
}

std::vector<NamedParameter> ViTBackbone::named_parameters() const {
  std::vector<NamedParameter> out;
  auto push = [&](std::string name, const Tensor& t) {
    out.push_back({"backbone." + std::move(name), t, Component::backbone});
  };
  push("patch_embed.weight", patch_weight_);
  push("patch_embed.bias", patch_bias_);
  push("pos_embed", pos_embed_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& L = layers_[i];
    const std::string p = layer_tag(i + 1) + ".";
    push(p + "ln1.gamma", L.ln1_gamma);
    push(p + "ln1.beta", L.ln1_beta);
    push(p + "attn.qkv.weight", L.qkv_weight);
    push(p + "attn.qkv.bias", L.qkv_bias);
    push(p + "attn.proj.weight", L.proj_weight);
    push(p + "attn.proj.bias", L.proj_bias);
    push(p + "ln2.gamma", L.ln2_gamma);
    push(p + "ln2.beta", L.ln2_beta);
    push(p + "mlp.fc1.weight", L.fc1_weight);
    push(p + "mlp.fc1.bias", L.fc1_bias);
    push(p + "mlp.fc2.weight", L.fc2_weight);
    push(p + "mlp.fc2.bias", L.fc2_bias);
  }
  return out;
}

REINLAB_NAMESPACE_END
