#include "reinlab/head.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "reinlab/errors.hpp"
#include "reinlab/ops.hpp"

REINLAB_NAMESPACE_BEGIN

void HeadConfig::validate() const {
  if (num_classes < 2) throw ConfigError("head needs at least 2 classes");
  if (num_classes > 255) throw ConfigError("at most 255 classes are supported (255 is the ignore label)");
  if (embed_dim < 4) throw ConfigError("head embed_dim must be at least 4");
  if (use_query_head && (num_queries == 0 || query_dim == 0)) {
    throw ConfigError("query head needs positive num_queries and query_dim");
  }
}

std::vector<std::uint8_t> SegPrediction::labels() const {
  const std::size_t p = pixel_logits.rows(), k = pixel_logits.cols();
  auto logits = pixel_logits.data();
  std::vector<std::uint8_t> out(p);
  for (std::size_t i = 0; i < p; ++i) {
    const Scalar* row = logits.data() + i * k;
    out[i] = static_cast<std::uint8_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

Tensor bilinear_upsample_matrix(std::size_t in_size, std::size_t out_size) {
  struct Tap {
    std::size_t lo, hi;
    double w_hi;
  };
  std::vector<Tap> taps(out_size);
  const double ratio = static_cast<double>(in_size) / static_cast<double>(out_size);
  for (std::size_t o = 0; o < out_size; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_size - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in_size - 1);
    taps[o] = {lo, hi, src - static_cast<double>(lo)};
  }
  const std::size_t n_in = in_size * in_size;
  Tensor u({out_size * out_size, n_in});
  auto data = u.data();
  for (std::size_t y = 0; y < out_size; ++y) {
    for (std::size_t x = 0; x < out_size; ++x) {
      Scalar* row = data.data() + (y * out_size + x) * n_in;
      const Tap& ty = taps[y];
      const Tap& tx = taps[x];
      const double wy[2] = {1.0 - ty.w_hi, ty.w_hi};
      const double wx[2] = {1.0 - tx.w_hi, tx.w_hi};
      const std::size_t ys[2] = {ty.lo, ty.hi};
      const std::size_t xs[2] = {tx.lo, tx.hi};
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) row[ys[a] * in_size + xs[b]] += static_cast<Scalar>(wy[a] * wx[b]);
      }
    }
  }
  return u;
}

namespace {

Tensor uniform_weight(std::size_t in, std::size_t out, Rng& rng) {
  return uniform_tensor({in, out}, std::sqrt(1.0 / static_cast<double>(in)), rng, true);
}

}  // namespace

DecodeHead::DecodeHead(const HeadConfig& config, std::size_t feature_dim, std::size_t num_taps,
                       std::size_t grid, std::size_t image_size, std::uint64_t seed)
    : config_(config), feature_dim_(feature_dim), num_taps_(num_taps), grid_(grid) {
  config_.validate();
  Rng rng = Rng(seed).fork("head");
  const std::size_t d = config_.embed_dim, k = config_.num_classes;
  pixel_weight_ = uniform_weight(num_taps * feature_dim, d, rng);
  pixel_bias_ = Tensor({d}, true);
  if (config_.use_query_head) {
    const std::size_t cq = config_.query_dim;
    queries_ = uniform_tensor({config_.num_queries, cq}, 1.0, rng, true);
    query_proj_weight_ = uniform_weight(cq, d, rng);
    query_proj_bias_ = Tensor({d}, true);
    class_weight_ = uniform_weight(cq, k, rng);
    class_bias_ = Tensor({k}, true);
    if (config_.linked_queries) query_gate_ = Tensor({cq}, true);
  } else {
    linear_weight_ = uniform_weight(d, k, rng);
    linear_bias_ = Tensor({k}, true);
  }
  upsample_ = bilinear_upsample_matrix(grid, image_size);
}

SegPrediction DecodeHead::decode(std::span<const Tensor> taps, const Tensor* adapter_query) const {
  if (taps.size() != num_taps_) {
    throw ContractError("decode expects " + std::to_string(num_taps_) + " tapped feature maps, got " +
                        std::to_string(taps.size()));
  }
  for (const auto& t : taps) {
    if (t.ndim() != 2 || t.rows() != grid_ * grid_ || t.cols() != feature_dim_) {
      throw ShapeError("tapped feature " + shape_string(t.shape()) + " does not match [" +
                       std::to_string(grid_ * grid_) + "x" + std::to_string(feature_dim_) + "]");
    }
  }
  SegPrediction pred;
  Tensor pixel = affine(concat_cols(taps), pixel_weight_, pixel_bias_);
  Tensor fused;
  if (config_.use_query_head) {
    Tensor queries = queries_;
    if (config_.linked_queries) {
      if (adapter_query == nullptr || !adapter_query->defined()) {
        throw ContractError("decode: linked head requires the adapter query Q");
      }
      if (adapter_query->shape() != queries_.shape()) {
        throw ShapeError("decode: adapter query " + shape_string(adapter_query->shape()) +
                         " does not match head queries " + shape_string(queries_.shape()));
      }
      queries = add(queries_, mul_row(*adapter_query, query_gate_));
    }
    Tensor query_embed = affine(queries, query_proj_weight_, query_proj_bias_);
    pred.mask_logits = matmul_nt(query_embed, pixel);
    pred.class_logits = affine(queries, class_weight_, class_bias_);
    fused = matmul(transpose(sigmoid(pred.mask_logits)), pred.class_logits);
  } else {
    fused = affine(pixel, linear_weight_, linear_bias_);
  }
  pred.pixel_logits = matmul(upsample_, fused);
  return pred;
}

std::vector<NamedParameter> DecodeHead::named_parameters() const {
  std::vector<NamedParameter> out;
  auto push = [&](const char* name, const Tensor& t) {
    if (t.defined()) out.push_back({std::string("head.") + name, t, Component::head});
  };
  push("pixel.weight", pixel_weight_);
  push("pixel.bias", pixel_bias_);
  push("queries", queries_);
  push("query_gate", query_gate_);
  push("query_proj.weight", query_proj_weight_);
  push("query_proj.bias", query_proj_bias_);
  push("class.weight", class_weight_);
  push("class.bias", class_bias_);
  push("linear.weight", linear_weight_);
  push("linear.bias", linear_bias_);
  return out;
}

Tensor segmentation_loss(const SegPrediction& prediction, std::span<const std::uint8_t> labels) {
  return cross_entropy_rows(prediction.pixel_logits, labels, kIgnoreLabel);
}

ConfusionMatrix::ConfusionMatrix(std::size_t num_classes)
    : k_(num_classes), counts_(num_classes * num_classes, 0) {}

void ConfusionMatrix::add(std::span<const std::uint8_t> predicted,
                          std::span<const std::uint8_t> truth) {
  if (predicted.size() != truth.size()) {
    throw ShapeError("confusion matrix: " + std::to_string(predicted.size()) + " predictions vs " +
                     std::to_string(truth.size()) + " labels");
  }
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = truth[i], p = predicted[i];
    if (t == kIgnoreLabel || p == kIgnoreLabel) continue;
    if (t >= k_ || p >= k_) {
      throw ContractError("label " + std::to_string(std::max(t, p)) + " outside [0, " +
                          std::to_string(k_) + ")");
    }
    ++counts_[t * k_ + p];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ShapeError("confusion matrix class counts differ");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

IoUReport ConfusionMatrix::report() const {
  IoUReport r;
  r.per_class.resize(k_);
  double total = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k_; ++c) {
    std::uint64_t tp = counts_[c * k_ + c], row = 0, col = 0;
    for (std::size_t j = 0; j < k_; ++j) {
      row += counts_[c * k_ + j];
      col += counts_[j * k_ + c];
    }
    const std::uint64_t uni = row + col - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    r.per_class[c] = iou;
    total += iou;
    ++present;
  }
  r.mean = present ? total / static_cast<double>(present) : 0.0;
  return r;
}

IoUReport miou(std::span<const std::uint8_t> predicted, std::span<const std::uint8_t> truth,
               std::size_t num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(predicted, truth);
  return cm.report();
}

REINLAB_NAMESPACE_END
