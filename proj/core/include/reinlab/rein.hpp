#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "reinlab/parameters.hpp"
#include "reinlab/tensor.hpp"

REINLAB_NAMESPACE_BEGIN

// Named compositions, each adding one mechanism to the previous one.
enum class ReinVariant { core, link, share, lora };

std::string_view variant_name(ReinVariant v);
// Accepts "rein-core", "rein-link", "rein-share", "rein-lora" (and the bare
// suffixes). Throws ConfigError otherwise.
ReinVariant parse_variant(std::string_view name);

struct ReinConfig {
  std::size_t tokens = 100;     // m
  std::size_t rank = 16;        // r
  std::size_t dim = 1024;       // c, backbone width
  std::size_t query_dim = 256;  // c'
  std::size_t layers = 24;      // N
  bool use_link = true;
  bool use_share = true;
  bool use_lora = true;

  void apply_variant(ReinVariant v);
  // Variant whose flags match, or "custom".
  std::string label() const;
  // Throws ConfigError.
  void validate() const;
};

struct AffineMap {
  Tensor weight;
  Tensor bias;
};

// Trainable state of the adapter. Per-layer vectors are indexed 0..N-1 for
// layer i = 1..N. With use_share each MLP vector holds a single entry that
// every layer references.
struct ReinAdapterParams {
  ReinConfig config;
  std::vector<Tensor> lora_a;  // [m x r], use_lora
  std::vector<Tensor> lora_b;  // [r x c], use_lora
  std::vector<Tensor> tokens;  // [m x c], !use_lora
  std::vector<AffineMap> token_mlp;
  std::vector<AffineMap> feature_mlp;
  std::vector<AffineMap> query_mlp;  // empty without use_link
  AffineMap query_merge;             // [3c' x c'], [c']; undefined without use_link

  const AffineMap& token_mlp_for(std::size_t layer) const;
  const AffineMap& feature_mlp_for(std::size_t layer) const;
  const AffineMap& query_mlp_for(std::size_t layer) const;

  // Caches T_i and T_i(2:m) x W_T + b_T as constants. Only valid while the
  // parameters do not change; call again after an update to refresh.
  void enable_precompute();
  void disable_precompute();
  bool precompute_enabled() const { return !token_cache.empty(); }

  std::vector<NamedParameter> named_parameters() const;

  std::vector<Tensor> token_cache;
  std::vector<Tensor> folded_cache;
};

// Zero: W_f and every bias. Uniform U(-sqrt(1/fan_in), sqrt(1/fan_in)):
// tokens and weights, where fan_in is the input width of a weight matrix, r
// for the A factors and c for full token sequences.
ReinAdapterParams init_parameters(const ReinConfig& config, std::uint64_t seed);

// T_i = A_i x B_i (or the full token sequence). Returns the cached tensor
// when precompute is enabled.
Tensor materialize_tokens(const ReinAdapterParams& params, std::size_t layer);

// softmax(f x T^T / sqrt(c)), [n x m]
Tensor similarity_map(const Tensor& features, const Tensor& tokens, std::size_t dim);

// S(:, 2:m) x (T(2:m) x W_T + b_T): the first token and the first column are
// excluded. Throws ConfigError when m < 2.
Tensor token_delta(const Tensor& similarity, const Tensor& tokens, const Tensor& weight,
                   const Tensor& bias);
// Same contraction with T(2:m) x W_T + b_T supplied precomputed.
Tensor token_delta_folded(const Tensor& similarity, const Tensor& folded_tokens);

// (delta_bar + f) x W_f + b_f
Tensor feature_delta(const Tensor& token_delta, const Tensor& features, const Tensor& weight,
                     const Tensor& bias);

// Q_i = T_i x W_Q + b_Q, [m x c']
Tensor layer_queries(const Tensor& tokens, const Tensor& weight, const Tensor& bias);

// concat([max_i Q_i, mean_i Q_i, Q_N]) x W + b. The last entry is Q_N.
Tensor aggregate_queries(std::span<const Tensor> layer_queries, const Tensor& weight,
                         const Tensor& bias);

struct Refinement {
  Tensor delta;  // delta f_i, [n x c]
  Tensor query;  // Q_i, undefined without use_link
};

// Full per-layer adapter computation for layer i (1-based).
Refinement rein_refine(std::size_t layer, const Tensor& features, const ReinAdapterParams& params);

REINLAB_NAMESPACE_END
