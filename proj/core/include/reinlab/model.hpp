#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reinlab/checkpoint.hpp"
#include "reinlab/head.hpp"
#include "reinlab/rein.hpp"
#include "reinlab/synth.hpp"
#include "reinlab/vit.hpp"

REINLAB_NAMESPACE_BEGIN

// full: backbone and head train. freeze: head only. rein: adapter and head.
enum class FineTuneMode { full, freeze, rein };

std::string_view mode_name(FineTuneMode mode);
// Throws ConfigError for unknown names.
FineTuneMode parse_mode(std::string_view name);

struct ModelConfig {
  ViTConfig vit;
  ReinConfig rein;  // dim and layers are taken from vit
  HeadConfig head;
  FineTuneMode mode = FineTuneMode::rein;

  ReinConfig resolved_rein() const;
  HeadConfig resolved_head() const;
  bool links_queries() const;
  void validate() const;

  // N=4, c=64, 64x64 images, 8-pixel patches, m=100, r=16, c'=64, K=6.
  static ModelConfig desk_default();
};

void to_json(nlohmann::json& j, const ViTConfig& c);
void from_json(const nlohmann::json& j, ViTConfig& c);
void to_json(nlohmann::json& j, const ReinConfig& c);
void from_json(const nlohmann::json& j, ReinConfig& c);
void to_json(nlohmann::json& j, const HeadConfig& c);
void from_json(const nlohmann::json& j, HeadConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Backbone, optional adapter and decode head wired together.
class SegModel {
 public:
  struct Output {
    BackboneOutput features;
    Tensor query;  // aggregated adapter query, when linked
    SegPrediction prediction;
  };

  SegModel(const ModelConfig& config, std::uint64_t backbone_seed, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  Output forward(const Tensor& image) const;

  std::vector<NamedParameter> parameters() const;
  std::vector<NamedParameter> trainable_parameters() const;
  // Scalars in trainable tensors, optionally restricted to one component.
  std::size_t trainable_scalars(std::optional<Component> component = std::nullopt) const;

  ViTBackbone& backbone() { return backbone_; }
  const ViTBackbone& backbone() const { return backbone_; }
  ReinAdapterParams* adapter() { return adapter_ ? &*adapter_ : nullptr; }
  const ReinAdapterParams* adapter() const { return adapter_ ? &*adapter_ : nullptr; }
  const DecodeHead& head() const { return head_; }

  // Tensors tagged by component, with the model configuration as metadata.
  Checkpoint to_checkpoint() const;
  // Overwrites every parameter from the checkpoint. Missing, surplus or
  // misshapen tensors are errors.
  void load_checkpoint(const Checkpoint& checkpoint);

 private:
  ModelConfig config_;
  ViTBackbone backbone_;
  std::optional<ReinAdapterParams> adapter_;
  DecodeHead head_;
};

// Converts a scene to a [3 x H x W] tensor, optionally mirrored horizontally.
Tensor image_tensor(const SceneSample& sample, bool flip = false);
std::vector<std::uint8_t> label_map(const SceneSample& sample, bool flip = false);

REINLAB_NAMESPACE_END
