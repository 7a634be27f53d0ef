#include "reinlab/rein.hpp"

#include <cmath>

#include "reinlab/errors.hpp"
#include "reinlab/ops.hpp"

REINLAB_NAMESPACE_BEGIN

std::string_view variant_name(ReinVariant v) {
  switch (v) {
    case ReinVariant::core:
      return "rein-core";
    case ReinVariant::link:
      return "rein-link";
    case ReinVariant::share:
      return "rein-share";
    case ReinVariant::lora:
      return "rein-lora";
  }
  return "custom";
}

ReinVariant parse_variant(std::string_view name) {
  if (name.starts_with("rein-")) name.remove_prefix(5);
  if (name == "core") return ReinVariant::core;
  if (name == "link") return ReinVariant::link;
  if (name == "share") return ReinVariant::share;
  if (name == "lora") return ReinVariant::lora;
  throw ConfigError("unknown rein variant '" + std::string(name) +
                    "' (expected rein-core, rein-link, rein-share or rein-lora)");
}

void ReinConfig::apply_variant(ReinVariant v) {
  use_link = v != ReinVariant::core;
  use_share = v == ReinVariant::share || v == ReinVariant::lora;
  use_lora = v == ReinVariant::lora;
}

std::string ReinConfig::label() const {
  for (auto v : {ReinVariant::core, ReinVariant::link, ReinVariant::share, ReinVariant::lora}) {
    ReinConfig probe = *this;
    probe.apply_variant(v);
    if (probe.use_link == use_link && probe.use_share == use_share && probe.use_lora == use_lora) {
      return std::string(variant_name(v));
    }
  }
  std::string s = "custom(";
  s += use_link ? "link" : "nolink";
  s += use_share ? ",share" : ",noshare";
  s += use_lora ? ",lora)" : ",nolora)";
  return s;
}

void ReinConfig::validate() const {
  if (tokens < 2) {
    throw ConfigError("token sequence length m=" + std::to_string(tokens) +
                      " must be at least 2 (the first token is excluded)");
  }
  if (dim == 0 || layers == 0) throw ConfigError("rein dim and layers must be positive");
  if (use_lora && (rank == 0 || rank >= dim)) {
    throw ConfigError("low-rank dimension r=" + std::to_string(rank) + " must satisfy 0 < r < c=" +
                      std::to_string(dim));
  }
  if (use_link && query_dim == 0) throw ConfigError("query_dim must be positive");
}

const AffineMap& ReinAdapterParams::token_mlp_for(std::size_t layer) const {
  return token_mlp[config.use_share ? 0 : layer - 1];
}

const AffineMap& ReinAdapterParams::feature_mlp_for(std::size_t layer) const {
  return feature_mlp[config.use_share ? 0 : layer - 1];
}

const AffineMap& ReinAdapterParams::query_mlp_for(std::size_t layer) const {
  return query_mlp[config.use_share ? 0 : layer - 1];
}

namespace {

double kaiming_bound(std::size_t fan_in) { return std::sqrt(1.0 / static_cast<double>(fan_in)); }

AffineMap uniform_affine(std::size_t in, std::size_t out, Rng& rng) {
  return {uniform_tensor({in, out}, kaiming_bound(in), rng, true), Tensor({out}, true)};
}

AffineMap zero_affine(std::size_t in, std::size_t out) {
  return {Tensor({in, out}, true), Tensor({out}, true)};
}

void check_layer(const ReinAdapterParams& params, std::size_t layer) {
  if (layer < 1 || layer > params.config.layers) {
    throw ContractError("rein layer index " + std::to_string(layer) + " outside [1, " +
                        std::to_string(params.config.layers) + "]");
  }
}

Tensor compute_tokens(const ReinAdapterParams& params, std::size_t layer) {
  if (params.config.use_lora) return matmul(params.lora_a[layer - 1], params.lora_b[layer - 1]);
  return params.tokens[layer - 1];
}

}  // namespace

ReinAdapterParams init_parameters(const ReinConfig& config, std::uint64_t seed) {
  config.validate();
  ReinAdapterParams p;
  p.config = config;
  Rng rng = Rng(seed).fork("rein");
  const std::size_t m = config.tokens, r = config.rank, c = config.dim, cq = config.query_dim;
  for (std::size_t i = 0; i < config.layers; ++i) {
    if (config.use_lora) {
      p.lora_a.push_back(uniform_tensor({m, r}, kaiming_bound(r), rng, true));
      p.lora_b.push_back(uniform_tensor({r, c}, kaiming_bound(r), rng, true));
    } else {
      p.tokens.push_back(uniform_tensor({m, c}, kaiming_bound(c), rng, true));
    }
  }
  const std::size_t copies = config.use_share ? 1 : config.layers;
  for (std::size_t i = 0; i < copies; ++i) {
    p.token_mlp.push_back(uniform_affine(c, c, rng));
    p.feature_mlp.push_back(zero_affine(c, c));
    if (config.use_link) p.query_mlp.push_back(uniform_affine(c, cq, rng));
  }
  if (config.use_link) p.query_merge = uniform_affine(3 * cq, cq, rng);
  return p;
}

void ReinAdapterParams::enable_precompute() {
  disable_precompute();
  NoGradGuard no_grad;
  for (std::size_t i = 1; i <= config.layers; ++i) {
    Tensor t = compute_tokens(*this, i).detach();
    const AffineMap& mlp = token_mlp_for(i);
    Tensor folded = affine(slice_rows(t, 1, config.tokens - 1), mlp.weight, mlp.bias).detach();
    token_cache.push_back(std::move(t));
    folded_cache.push_back(std::move(folded));
  }
}

void ReinAdapterParams::disable_precompute() {
  token_cache.clear();
  folded_cache.clear();
}

std::vector<NamedParameter> ReinAdapterParams::named_parameters() const {
  std::vector<NamedParameter> out;
  auto push = [&](const std::string& name, const Tensor& t) {
    out.push_back({"adapter." + name, t, Component::adapter});
  };
  for (std::size_t i = 0; i < config.layers; ++i) {
    const std::string tag = layer_tag(i + 1);
    if (config.use_lora) {
      push(tag + ".A", lora_a[i]);
      push(tag + ".B", lora_b[i]);
    } else {
      push(tag + ".T", tokens[i]);
    }
  }
  auto push_mlp = [&](const std::vector<AffineMap>& maps, const char* w, const char* b) {
    for (std::size_t i = 0; i < maps.size(); ++i) {
      const std::string scope = config.use_share ? "shared" : layer_tag(i + 1);
      push(scope + "." + w, maps[i].weight);
      push(scope + "." + b, maps[i].bias);
    }
  };
  push_mlp(token_mlp, "W_T", "b_T");
  push_mlp(feature_mlp, "W_f", "b_f");
  push_mlp(query_mlp, "W_Q", "b_Q");
  if (config.use_link) {
    push("query.W_cat", query_merge.weight);
    push("query.b_cat", query_merge.bias);
  }
  return out;
}

Tensor materialize_tokens(const ReinAdapterParams& params, std::size_t layer) {
  check_layer(params, layer);
  if (params.precompute_enabled()) return params.token_cache[layer - 1];
  return compute_tokens(params, layer);
}

Tensor similarity_map(const Tensor& features, const Tensor& tokens, std::size_t dim) {
  if (features.cols() != tokens.cols()) {
    throw ShapeError("similarity_map: feature width " + std::to_string(features.cols()) +
                     " differs from token width " + std::to_string(tokens.cols()));
  }
  const Scalar inv_sqrt_c = Scalar(1) / std::sqrt(static_cast<Scalar>(dim));
  return softmax_rows(scale(matmul_nt(features, tokens), inv_sqrt_c));
}

Tensor token_delta(const Tensor& similarity, const Tensor& tokens, const Tensor& weight,
                   const Tensor& bias) {
  const std::size_t m = tokens.rows();
  if (m < 2) throw ConfigError("token_delta: m=" + std::to_string(m) + " leaves no tokens after excluding the first");
  if (similarity.cols() != m) {
    throw ShapeError("token_delta: similarity " + shape_string(similarity.shape()) +
                     " does not match tokens " + shape_string(tokens.shape()));
  }
  Tensor projected = affine(slice_rows(tokens, 1, m - 1), weight, bias);
  return matmul(slice_cols(similarity, 1, m - 1), projected);
}

Tensor token_delta_folded(const Tensor& similarity, const Tensor& folded_tokens) {
  const std::size_t m = similarity.cols();
  if (m < 2) throw ConfigError("token_delta: m must be at least 2");
  return matmul(slice_cols(similarity, 1, m - 1), folded_tokens);
}

Tensor feature_delta(const Tensor& token_delta, const Tensor& features, const Tensor& weight,
                     const Tensor& bias) {
  if (token_delta.shape() != features.shape()) {
    throw ShapeError("feature_delta: " + shape_string(token_delta.shape()) + " vs " +
                     shape_string(features.shape()));
  }
  return affine(add(token_delta, features), weight, bias);
}

Tensor layer_queries(const Tensor& tokens, const Tensor& weight, const Tensor& bias) {
  return affine(tokens, weight, bias);
}

Tensor aggregate_queries(std::span<const Tensor> layer_queries, const Tensor& weight,
                         const Tensor& bias) {
  if (layer_queries.empty()) throw ContractError("aggregate_queries: no layer queries");
  const Tensor parts[] = {max_over(layer_queries), mean_over(layer_queries), layer_queries.back()};
  return affine(concat_cols(parts), weight, bias);
}

Refinement rein_refine(std::size_t layer, const Tensor& features, const ReinAdapterParams& params) {
  check_layer(params, layer);
  const ReinConfig& cfg = params.config;
  Tensor tokens = materialize_tokens(params, layer);
  Tensor similarity = similarity_map(features, tokens, cfg.dim);
  Tensor delta_bar;
  if (params.precompute_enabled()) {
    delta_bar = token_delta_folded(similarity, params.folded_cache[layer - 1]);
  } else {
    const AffineMap& mlp = params.token_mlp_for(layer);
    delta_bar = token_delta(similarity, tokens, mlp.weight, mlp.bias);
  }
  const AffineMap& fmlp = params.feature_mlp_for(layer);
  Refinement out;
  out.delta = feature_delta(delta_bar, features, fmlp.weight, fmlp.bias);
  if (cfg.use_link) {
    const AffineMap& qmlp = params.query_mlp_for(layer);
    out.query = layer_queries(tokens, qmlp.weight, qmlp.bias);
  }
  return out;
}

REINLAB_NAMESPACE_END
