#include "reinlab/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <map>
#include <set>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "reinlab/ops.hpp"
#include "reinlab/optim.hpp"
#include "reinlab/param_audit.hpp"
#include "reinlab/rng.hpp"

REINLAB_NAMESPACE_BEGIN

void TrainConfig::validate() const {
  model.validate();
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (eval_interval == 0) throw ConfigError("eval_interval must be positive");
  if (loss_window == 0) throw ConfigError("loss_window must be positive");
  if (lr_head_and_rein < 0 || lr_backbone < 0 || weight_decay < 0) {
    throw ConfigError("learning rates and weight decay must be non-negative");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"model", c.model},
       {"iterations", c.iterations},
       {"batch_size", c.batch_size},
       {"lr_backbone", c.lr_backbone},
       {"lr_head_and_rein", c.lr_head_and_rein},
       {"weight_decay", c.weight_decay},
       {"seed", c.seed},
       {"train_dir", c.train_dir},
       {"val_dir", c.val_dir},
       {"test_dir", c.test_dir},
       {"eval_interval", c.eval_interval},
       {"loss_window", c.loss_window},
       {"flip", c.flip}};
  if (c.backbone_seed) j["backbone_seed"] = *c.backbone_seed;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const std::set<std::string> allowed = {
      "model", "iterations", "batch_size", "lr_backbone", "lr_head_and_rein", "weight_decay",
      "seed", "backbone_seed", "train_dir", "val_dir", "test_dir", "eval_interval", "loss_window",
      "flip"};
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in train config");
  }
  if (j.contains("model")) j.at("model").get_to(c.model);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_backbone = j.value("lr_backbone", c.lr_backbone);
  c.lr_head_and_rein = j.value("lr_head_and_rein", c.lr_head_and_rein);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  if (j.contains("backbone_seed")) c.backbone_seed = j.at("backbone_seed").get<std::uint64_t>();
  c.train_dir = j.value("train_dir", c.train_dir);
  c.val_dir = j.value("val_dir", c.val_dir);
  c.test_dir = j.value("test_dir", c.test_dir);
  c.eval_interval = j.value("eval_interval", c.eval_interval);
  c.loss_window = j.value("loss_window", c.loss_window);
  c.flip = j.value("flip", c.flip);
}

std::string MetricsLog::to_csv() const {
  std::string out = "iteration,train_loss,val_miou,test_miou,params\n";
  char line[256];
  for (const auto& r : records) {
    std::snprintf(line, sizeof(line), "%zu,%.9g,%.9g,%.9g,%llu\n", r.iteration, r.train_loss,
                  r.val_miou, r.test_miou, static_cast<unsigned long long>(r.params));
    out += line;
  }
  return out;
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("REINLAB_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(raw, &end, 10);
  if (*end != '\0' || v == 0 || v > 1024) {
    throw ConfigError(std::string("REINLAB_THREADS must be an integer in [1, 1024], got '") + raw + "'");
  }
  return static_cast<std::size_t>(v);
}

IoUReport evaluate_model(const SegModel& model, const Dataset& dataset, std::size_t threads) {
  const std::size_t k = model.config().head.num_classes;
  if (dataset.info.num_classes != k) {
    throw ConfigError("model predicts " + std::to_string(k) + " classes but the dataset has " +
                      std::to_string(dataset.info.num_classes));
  }
  const std::size_t n = dataset.samples.size();
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<ConfusionMatrix> partial(threads, ConfusionMatrix(k));
  auto work = [&](std::size_t t) {
    NoGradGuard no_grad;
    const std::size_t begin = n * t / threads, end = n * (t + 1) / threads;
    for (std::size_t i = begin; i < end; ++i) {
      const auto& s = dataset.samples[i];
      auto out = model.forward(image_tensor(s));
      partial[t].add(out.prediction.labels(), s.label);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  ConfusionMatrix total(k);
  for (const auto& cm : partial) total.merge(cm);
  return total.report();
}

SegModel model_from_checkpoint(const Checkpoint& checkpoint) {
  if (!checkpoint.metadata.is_object() || !checkpoint.metadata.contains("model")) {
    throw ConfigError("checkpoint carries no model configuration");
  }
  ModelConfig config = checkpoint.metadata.at("model").get<ModelConfig>();
  SegModel model(config, 0, 0);
  model.load_checkpoint(checkpoint);
  return model;
}

IoUReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, std::size_t threads) {
  SegModel model = model_from_checkpoint(checkpoint);
  const auto& vit = model.config().vit;
  if (dataset.info.height != vit.image_size || dataset.info.width != vit.image_size) {
    throw ConfigError("dataset images are " + std::to_string(dataset.info.height) + "x" +
                      std::to_string(dataset.info.width) + ", model expects " +
                      std::to_string(vit.image_size));
  }
  if (auto* adapter = model.adapter()) adapter->enable_precompute();
  return evaluate_model(model, dataset, threads);
}

Checkpoint swap_adapter(const Checkpoint& base, const Checkpoint& donor) {
  std::map<std::string, const CheckpointTensor*> base_index;
  for (const auto& t : base.tensors) base_index[t.name] = &t;
  auto check_compatible = [&](const CheckpointTensor& t) {
    auto it = base_index.find(t.name);
    if (it != base_index.end() && it->second->dims != t.dims) {
      throw ShapeError("swap_adapter: tensor " + t.name + " differs in shape between base and donor");
    }
  };
  Checkpoint out;
  out.metadata = donor.metadata;
  for (const auto& t : base.tensors) {
    if (t.component == Component::backbone) out.tensors.push_back(t);
  }
  for (const auto& t : donor.tensors) {
    check_compatible(t);
    if (t.component != Component::backbone) out.tensors.push_back(t);
  }
  return out;
}

namespace {

Dataset load_split(const std::string& dir) { return read_dataset(dir); }

std::string config_hash(const TrainConfig& config) {
  const nlohmann::json j = config;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_label(j.dump())));
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& config) {
  if (config.train_dir.empty()) throw ConfigError("train_dir is required");
  Dataset train_set = load_split(config.train_dir);
  std::optional<Dataset> val, test;
  if (!config.val_dir.empty()) val = load_split(config.val_dir);
  if (!config.test_dir.empty()) test = load_split(config.test_dir);
  return train(config, {&train_set, val ? &*val : nullptr, test ? &*test : nullptr});
}

TrainResult train(const TrainConfig& config, const TrainData& data) {
  config.validate();
  if (data.train == nullptr || data.train->samples.empty()) {
    throw ConfigError("training split is empty");
  }
  const std::size_t k = config.model.head.num_classes;
  for (const Dataset* ds : {data.train, data.val, data.test}) {
    if (ds && ds->info.num_classes != k) {
      throw ConfigError("dataset has " + std::to_string(ds->info.num_classes) +
                        " classes, model expects " + std::to_string(k));
    }
  }

  SegModel model(config.model, config.resolved_backbone_seed(), config.seed);
  const std::uint64_t params =
      count_trainable(config.model.vit, config.model.resolved_rein(), config.model.mode).total;

  AdamWOptions defaults;
  defaults.weight_decay = config.weight_decay;
  AdamW optimizer(defaults);
  for (const auto& p : model.trainable_parameters()) {
    optimizer.add(p, p.component == Component::backbone ? config.lr_backbone : config.lr_head_and_rein);
  }

  MetricsLog log;
  std::deque<double> window;
  auto window_mean = [&] {
    if (window.empty()) return std::nan("");
    return std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
  };
  auto record = [&](std::size_t iteration) {
    MetricsRecord r;
    r.iteration = iteration;
    r.train_loss = window_mean();
    r.val_miou = data.val ? evaluate_model(model, *data.val).mean : std::nan("");
    r.test_miou = data.test ? evaluate_model(model, *data.test).mean : std::nan("");
    r.params = params;
    log.records.push_back(r);
  };

  record(0);
  Rng batch_rng = Rng(config.seed).fork("batches");
  const auto& samples = data.train->samples;
  const Scalar inv_batch = Scalar(1) / static_cast<Scalar>(config.batch_size);
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    double loss_value = 0;
    try {
      Tape tape;
      Tensor total;
      for (std::size_t b = 0; b < config.batch_size; ++b) {
        const auto idx = static_cast<std::size_t>(
            batch_rng.uniform_int(0, static_cast<std::int64_t>(samples.size()) - 1));
        const bool flip = config.flip && batch_rng.bernoulli(0.5);
        const auto& s = samples[idx];
        auto out = model.forward(image_tensor(s, flip));
        Tensor loss = segmentation_loss(out.prediction, label_map(s, flip));
        total = total.defined() ? add(total, loss) : loss;
      }
      Tensor loss = scale(total, inv_batch);
      loss_value = loss.item();
      if (!std::isfinite(loss_value)) throw NumericError("non-finite training loss");
      tape.backward(loss);
      optimizer.step();
      optimizer.zero_grad();
      window.push_back(loss_value);
      if (window.size() > config.loss_window) window.pop_front();
      // Blown-up weights can surface only in the evaluation forward pass.
      if (it % config.eval_interval == 0 || it == config.iterations) record(it);
    } catch (const NumericError& e) {
      throw TrainingDiverged("training diverged at iteration " + std::to_string(it) + ": " + e.what(),
                             log);
    }
  }

  TrainResult result;
  result.log = std::move(log);
  result.final_train_loss = window_mean();
  result.checkpoint = model.to_checkpoint();
  result.checkpoint.metadata["iteration"] = config.iterations;
  result.checkpoint.metadata["seed"] = config.seed;
  result.checkpoint.metadata["backbone_seed"] = config.resolved_backbone_seed();
  result.checkpoint.metadata["config_hash"] = config_hash(config);
  return result;
}

REINLAB_NAMESPACE_END
