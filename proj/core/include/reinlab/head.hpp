#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "reinlab/parameters.hpp"
#include "reinlab/tensor.hpp"

REINLAB_NAMESPACE_BEGIN

struct HeadConfig {
  std::size_t num_classes = 6;   // K
  std::size_t embed_dim = 64;    // d
  std::size_t num_queries = 100;
  std::size_t query_dim = 64;    // c'
  bool use_query_head = true;    // false: per-pixel linear classifier
  // Adapter queries are injected into the query set (see DecodeHead).
  bool linked_queries = false;

  void validate() const;
};

struct SegPrediction {
  Tensor class_logits;  // [queries x K], query head only
  Tensor mask_logits;   // [queries x n], query head only
  Tensor pixel_logits;  // [H*W x K], row-major pixels

  // Argmax over classes per pixel.
  std::vector<std::uint8_t> labels() const;
};

// Bilinear interpolation matrix [out*out x in*in] (half-pixel centers, edge
// clamped) mapping a square low-resolution grid to a square output.
Tensor bilinear_upsample_matrix(std::size_t in_size, std::size_t out_size);

// Query-mask segmentation head.
//
//   pixel  = concat(taps) x W_pix + b_pix                  [n x d]
//   Qd     = queries x W_qd + b_qd                          [q x d]
//   mask   = Qd x pixel^T                                   [q x n]
//   class  = queries x W_cls + b_cls                        [q x K]
//   fused[p, k] = sum_q sigmoid(mask[q, p]) * class[q, k]   [n x K]
//   pixel_logits = bilinear upsample of fused               [H*W x K]
//
// The query set is the head's own learned queries. When linked, the adapter
// query Q is added through a zero-initialized per-channel gate:
// queries = learned + Q * gate, so a fresh head behaves exactly like an
// unlinked one.
class DecodeHead {
 public:
  DecodeHead(const HeadConfig& config, std::size_t feature_dim, std::size_t num_taps,
             std::size_t grid, std::size_t image_size, std::uint64_t seed);

  const HeadConfig& config() const { return config_; }

  // Throws ContractError when the head is linked and adapter_query is null.
  SegPrediction decode(std::span<const Tensor> taps, const Tensor* adapter_query) const;

  std::vector<NamedParameter> named_parameters() const;

 private:
  HeadConfig config_;
  std::size_t feature_dim_;
  std::size_t num_taps_;
  std::size_t grid_;
  Tensor pixel_weight_, pixel_bias_;
  Tensor queries_, query_gate_;
  Tensor query_proj_weight_, query_proj_bias_;
  Tensor class_weight_, class_bias_;
  Tensor linear_weight_, linear_bias_;
  Tensor upsample_;
};

// Mean per-pixel cross-entropy on fused logits over non-ignored pixels.
Tensor segmentation_loss(const SegPrediction& prediction, std::span<const std::uint8_t> labels);

struct IoUReport {
  // Empty entries mark classes absent from both prediction and ground truth.
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
};

// Ground-truth x prediction pixel counts. Integer accumulation, so merging
// partial matrices in any order gives the same result.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes);

  // Pixels whose ground truth or prediction equals the ignore label are skipped.
  void add(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth);
  void merge(const ConfusionMatrix& other);

  std::size_t num_classes() const { return k_; }
  std::uint64_t count(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * k_ + predicted];
  }
  IoUReport report() const;

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

IoUReport miou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth,
               std::size_t num_classes);

REINLAB_NAMESPACE_END
