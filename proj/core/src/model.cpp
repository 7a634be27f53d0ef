#include "reinlab/model.hpp"

#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "reinlab/errors.hpp"
#include "reinlab/ops.hpp"

REINLAB_NAMESPACE_BEGIN

std::string_view mode_name(FineTuneMode mode) {
  switch (mode) {
    case FineTuneMode::full:
      return "full";
    case FineTuneMode::freeze:
      return "freeze";
    case FineTuneMode::rein:
      return "rein";
  }
  return "unknown";
}

FineTuneMode parse_mode(std::string_view name) {
  if (name == "full") return FineTuneMode::full;
  if (name == "freeze") return FineTuneMode::freeze;
  if (name == "rein") return FineTuneMode::rein;
  throw ConfigError("unknown fine-tune mode '" + std::string(name) + "' (expected full, freeze or rein)");
}

ReinConfig ModelConfig::resolved_rein() const {
  ReinConfig r = rein;
  r.dim = vit.dim;
  r.layers = vit.depth;
  return r;
}

bool ModelConfig::links_queries() const {
  return mode == FineTuneMode::rein && rein.use_link && head.use_query_head;
}

HeadConfig ModelConfig::resolved_head() const {
  HeadConfig h = head;
  h.linked_queries = links_queries();
  return h;
}

void ModelConfig::validate() const {
  vit.validate();
  const HeadConfig h = resolved_head();
  h.validate();
  if (mode == FineTuneMode::rein) resolved_rein().validate();
  if (h.linked_queries && (h.num_queries != rein.tokens || h.query_dim != rein.query_dim)) {
    throw ConfigError("a linked head needs num_queries == m (" + std::to_string(rein.tokens) +
                      ") and query_dim == c' (" + std::to_string(rein.query_dim) + ")");
  }
}

ModelConfig ModelConfig::desk_default() {
  ModelConfig c;
  c.vit = ViTConfig{};
  c.rein.tokens = 100;
  c.rein.rank = 16;
  c.rein.query_dim = 64;
  c.rein.dim = c.vit.dim;
  c.rein.layers = c.vit.depth;
  c.head.num_classes = 6;
  c.head.embed_dim = 64;
  c.head.num_queries = c.rein.tokens;
  c.head.query_dim = c.rein.query_dim;
  c.mode = FineTuneMode::rein;
  return c;
}

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const char* scope) {
  if (!j.is_object()) throw ConfigError(std::string(scope) + " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError(std::string("unknown key '") + key + "' in " + scope);
  }
}

}  // namespace

void to_json(nlohmann::json& j, const ViTConfig& c) {
  j = {{"image_size", c.image_size}, {"patch_size", c.patch_size}, {"depth", c.depth},
       {"dim", c.dim},               {"heads", c.heads},           {"mlp_ratio", c.mlp_ratio},
       {"tap_layers", c.tap_layers}};
}

void from_json(const nlohmann::json& j, ViTConfig& c) {
  reject_unknown_keys(j, {"image_size", "patch_size", "depth", "dim", "heads", "mlp_ratio", "tap_layers"},
                      "vit");
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  const std::size_t old_depth = c.depth;
  c.depth = j.value("depth", c.depth);
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  if (j.contains("tap_layers")) {
    c.tap_layers = j.at("tap_layers").get<std::vector<std::size_t>>();
  } else if (c.depth != old_depth) {
    c.tap_layers = ViTConfig::default_taps(c.depth);
  }
}

void to_json(nlohmann::json& j, const ReinConfig& c) {
  j = {{"m", c.tokens},         {"r", c.rank},
       {"c_prime", c.query_dim}, {"use_link", c.use_link},
       {"use_share", c.use_share}, {"use_lora", c.use_lora}};
}

void from_json(const nlohmann::json& j, ReinConfig& c) {
  reject_unknown_keys(j, {"m", "r", "c_prime", "use_link", "use_share", "use_lora", "variant"}, "rein");
  if (j.contains("variant")) c.apply_variant(parse_variant(j.at("variant").get<std::string>()));
  c.tokens = j.value("m", c.tokens);
  c.rank = j.value("r", c.rank);
  c.query_dim = j.value("c_prime", c.query_dim);
  c.use_link = j.value("use_link", c.use_link);
  c.use_share = j.value("use_share", c.use_share);
  c.use_lora = j.value("use_lora", c.use_lora);
}

void to_json(nlohmann::json& j, const HeadConfig& c) {
  j = {{"num_classes", c.num_classes}, {"embed_dim", c.embed_dim},
       {"num_queries", c.num_queries}, {"query_dim", c.query_dim},
       {"use_query_head", c.use_query_head}};
}

void from_json(const nlohmann::json& j, HeadConfig& c) {
  reject_unknown_keys(j, {"num_classes", "embed_dim", "num_queries", "query_dim", "use_query_head"},
                      "head");
  c.num_classes = j.value("num_classes", c.num_classes);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.num_queries = j.value("num_queries", c.num_queries);
  c.query_dim = j.value("query_dim", c.query_dim);
  c.use_query_head = j.value("use_query_head", c.use_query_head);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vit", c.vit}, {"rein", c.rein}, {"head", c.head}, {"mode", std::string(mode_name(c.mode))}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  reject_unknown_keys(j, {"vit", "rein", "head", "mode"}, "model");
  if (j.contains("vit")) j.at("vit").get_to(c.vit);
  if (j.contains("rein")) j.at("rein").get_to(c.rein);
  if (j.contains("head")) j.at("head").get_to(c.head);
  if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
}

namespace {

ModelConfig checked(const ModelConfig& config) {
  config.validate();
  return config;
}

}  // namespace

SegModel::SegModel(const ModelConfig& config, std::uint64_t backbone_seed, std::uint64_t seed)
    : config_(checked(config)),
      backbone_(config_.vit, backbone_seed),
      head_(config_.resolved_head(), config_.vit.dim, config_.vit.tap_layers.size(),
            config_.vit.grid(), config_.vit.image_size, seed) {
  if (config_.mode != FineTuneMode::full) backbone_.set_frozen(true);
  if (config_.mode == FineTuneMode::rein) adapter_ = init_parameters(config_.resolved_rein(), seed);
}

SegModel::Output SegModel::forward(const Tensor& image) const {
  Output out;
  if (adapter_) {
    std::vector<Tensor> layer_qs;
    const ReinAdapterParams& params = *adapter_;
    out.features = backbone_.forward(image, [&](std::size_t layer, const Tensor& f) {
      Refinement r = rein_refine(layer, f, params);
      if (r.query.defined()) layer_qs.push_back(r.query);
      return r.delta;
    });
    if (params.config.use_link) {
      out.query = aggregate_queries(layer_qs, params.query_merge.weight, params.query_merge.bias);
    }
  } else {
    out.features = backbone_.forward(image);
  }
  out.prediction = head_.decode(out.features.taps, out.query.defined() ? &out.query : nullptr);
  return out;
}

std::vector<NamedParameter> SegModel::parameters() const {
  std::vector<NamedParameter> out = backbone_.named_parameters();
  if (adapter_) {
    auto a = adapter_->named_parameters();
    out.insert(out.end(), a.begin(), a.end());
  }
  auto h = head_.named_parameters();
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

std::vector<NamedParameter> SegModel::trainable_parameters() const {
  std::vector<NamedParameter> out;
  for (auto& p : parameters()) {
    if (p.tensor.requires_grad()) out.push_back(std::move(p));
  }
  return out;
}

std::size_t SegModel::trainable_scalars(std::optional<Component> component) const {
  std::size_t n = 0;
  for (const auto& p : trainable_parameters()) {
    if (!component || p.component == *component) n += p.tensor.size();
  }
  return n;
}

Checkpoint SegModel::to_checkpoint() const {
  Checkpoint ckpt;
  for (const auto& p : parameters()) {
    CheckpointTensor t;
    t.name = p.name;
    t.component = p.component;
    for (auto d : p.tensor.shape()) t.dims.push_back(static_cast<std::uint32_t>(d));
    auto data = p.tensor.data();
    t.data.assign(data.begin(), data.end());
    ckpt.tensors.push_back(std::move(t));
  }
  ckpt.metadata = {{"model", config_}};
  return ckpt;
}

void SegModel::load_checkpoint(const Checkpoint& checkpoint) {
  auto params = parameters();
  std::set<std::string> expected;
  for (auto& p : params) {
    expected.insert(p.name);
    const CheckpointTensor* t = checkpoint.find(p.name);
    if (t == nullptr) throw ConfigError("checkpoint is missing tensor " + p.name);
    Shape shape(t->dims.begin(), t->dims.end());
    if (shape != p.tensor.shape()) {
      throw ShapeError("checkpoint tensor " + p.name + " has shape " + shape_string(shape) +
                       ", model expects " + shape_string(p.tensor.shape()));
    }
    if (t->component != p.component) {
      throw ConfigError("checkpoint tensor " + p.name + " is tagged " +
                        std::string(component_name(t->component)));
    }
    auto dst = p.tensor.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Scalar>(t->data[i]);
  }
  for (const auto& t : checkpoint.tensors) {
    if (!expected.count(t.name)) throw ConfigError("checkpoint has unexpected tensor " + t.name);
  }
  if (adapter_ && adapter_->precompute_enabled()) adapter_->enable_precompute();
}

Tensor image_tensor(const SceneSample& sample, bool flip) {
  const std::size_t h = sample.height, w = sample.width;
  Tensor t({3, h, w});
  auto dst = t.data();
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = flip ? w - 1 - x : x;
        dst[(ch * h + y) * w + x] = static_cast<Scalar>(sample.image[(ch * h + y) * w + sx]);
      }
    }
  }
  return t;
}

std::vector<std::uint8_t> label_map(const SceneSample& sample, bool flip) {
  if (!flip) return sample.label;
  const std::size_t h = sample.height, w = sample.width;
  std::vector<std::uint8_t> out(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = sample.label[y * w + w - 1 - x];
  }
  return out;
}

REINLAB_NAMESPACE_END
