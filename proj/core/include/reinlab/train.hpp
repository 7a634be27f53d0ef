#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "reinlab/checkpoint.hpp"
#include "reinlab/errors.hpp"
#include "reinlab/head.hpp"
#include "reinlab/model.hpp"
#include "reinlab/synth.hpp"

REINLAB_NAMESPACE_BEGIN

struct TrainConfig {
  ModelConfig model = ModelConfig::desk_default();
  std::size_t iterations = 2000;
  std::size_t batch_size = 4;
  // Backbone rate only applies in full mode; the backbone is frozen otherwise.
  double lr_backbone = 1e-5;
  double lr_head_and_rein = 1e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  // Backbone initialization seed; defaults to `seed`.
  std::optional<std::uint64_t> backbone_seed;
  std::string train_dir;
  std::string val_dir;
  std::string test_dir;
  std::size_t eval_interval = 500;
  // Number of trailing iterations averaged into the logged train loss.
  std::size_t loss_window = 200;
  bool flip = true;

  std::uint64_t resolved_backbone_seed() const { return backbone_seed.value_or(seed); }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct MetricsRecord {
  std::size_t iteration = 0;
  double train_loss = 0;  // windowed mean; NaN before the first step
  double val_miou = 0;    // NaN when no validation split is given
  double test_miou = 0;   // NaN when no test split is given
  std::uint64_t params = 0;
};

struct MetricsLog {
  std::vector<MetricsRecord> records;
  // Header: iteration,train_loss,val_miou,test_miou,params
  std::string to_csv() const;
};

// Thrown when the loss or a gradient stops being finite; carries the log up
// to the failure.
class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, MetricsLog partial)
      : NumericError(what), partial_log(std::move(partial)) {}
  MetricsLog partial_log;
};

struct TrainData {
  const Dataset* train = nullptr;
  const Dataset* val = nullptr;
  const Dataset* test = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  MetricsLog log;
  double final_train_loss = 0;  // windowed mean at the last iteration
};

// REINLAB_THREADS, or 1 when unset. Throws ConfigError on a malformed value.
std::size_t threads_from_env();

// Reads the splits named in the config.
TrainResult train(const TrainConfig& config);
TrainResult train(const TrainConfig& config, const TrainData& data);

// Dataset-level IoU (one confusion matrix over all pixels). `threads` splits
// samples into contiguous chunks; the merged result does not depend on it.
IoUReport evaluate_model(const SegModel& model, const Dataset& dataset, std::size_t threads = 1);

// Rebuilds the model from checkpoint metadata. Throws ConfigError when the
// configuration is missing or the class count differs from the dataset.
IoUReport evaluate(const Checkpoint& checkpoint, const Dataset& dataset, std::size_t threads = 1);

SegModel model_from_checkpoint(const Checkpoint& checkpoint);

// Backbone of `base` with adapter and head of `donor`. Metadata follows the
// donor. Throws ShapeError naming the first incompatible tensor.
Checkpoint swap_adapter(const Checkpoint& base, const Checkpoint& donor);

REINLAB_NAMESPACE_END
