#include <cmath>
#include <cstring>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "reinlab/errors.hpp"
#include "reinlab/ops.hpp"
#include "reinlab/param_audit.hpp"
#include "reinlab/train.hpp"

namespace reinlab {
namespace {

ModelConfig tiny_model(FineTuneMode mode) {
  ModelConfig c;
  c.vit.image_size = 32;
  c.vit.patch_size = 8;
  c.vit.depth = 2;
  c.vit.dim = 16;
  c.vit.heads = 2;
  c.vit.mlp_ratio = 2;
  c.vit.tap_layers = {1, 2};
  c.rein.tokens = 8;
  c.rein.rank = 4;
  c.rein.query_dim = 8;
  c.head.num_classes = 6;
  c.head.embed_dim = 8;
  c.head.num_queries = 8;
  c.head.query_dim = 8;
  c.mode = mode;
  return c;
}

DatasetInfo tiny_info(bool target = false) {
  DatasetInfo info;
  info.height = info.width = 32;
  info.domain = target ? DomainSpec::target(6) : DomainSpec::source(6);
  info.base_seed = 17;
  return info;
}

struct Splits {
  Dataset train = generate_dataset(tiny_info(), "train", 12);
  Dataset val = generate_dataset(tiny_info(), "val", 4);
  Dataset test = generate_dataset(tiny_info(true), "test", 4);
  TrainData data() const { return {&train, &val, &test}; }
};

const Splits& splits() {
  static const Splits s;
  return s;
}

TrainConfig tiny_train(FineTuneMode mode, std::size_t iterations = 6) {
  TrainConfig cfg;
  cfg.model = tiny_model(mode);
  cfg.iterations = iterations;
  cfg.batch_size = 2;
  cfg.eval_interval = 3;
  cfg.loss_window = 4;
  cfg.seed = 5;
  return cfg;
}

TEST(TrainConfigTest, JsonRoundTripAndUnknownKeys) {
  TrainConfig cfg = tiny_train(FineTuneMode::rein);
  cfg.backbone_seed = 9;
  cfg.train_dir = "a";
  const nlohmann::json j = cfg;
  const TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(back.resolved_backbone_seed(), 9u);

  nlohmann::json bad = j;
  bad["learning_rate"] = 1;
  EXPECT_THROW(bad.get<TrainConfig>(), ConfigError);
  nlohmann::json bad_model = j;
  bad_model["model"]["vit"]["depht"] = 3;
  EXPECT_THROW(bad_model.get<TrainConfig>(), ConfigError);
}

TEST(TrainConfigTest, Validation) {
  TrainConfig cfg = tiny_train(FineTuneMode::rein);
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = tiny_train(FineTuneMode::rein);
  cfg.lr_head_and_rein = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(TrainTest, SameSeedGivesIdenticalLogBytes) {
  for (auto mode : {FineTuneMode::full, FineTuneMode::freeze, FineTuneMode::rein}) {
    const auto a = train(tiny_train(mode), splits().data());
    const auto b = train(tiny_train(mode), splits().data());
    EXPECT_EQ(a.log.to_csv(), b.log.to_csv());
    EXPECT_EQ(a.checkpoint.serialize(), b.checkpoint.serialize());
  }
}

TEST(TrainTest, LogShapeAndParameterCount) {
  const TrainConfig cfg = tiny_train(FineTuneMode::rein, 7);
  const auto r = train(cfg, splits().data());
  std::vector<std::size_t> its;
  for (const auto& rec : r.log.records) its.push_back(rec.iteration);
  EXPECT_EQ(its, (std::vector<std::size_t>{0, 3, 6, 7}));
  EXPECT_TRUE(std::isnan(r.log.records[0].train_loss));
  const auto expected = count_trainable(cfg.model.vit, cfg.model.resolved_rein(), cfg.model.mode).total;
  for (const auto& rec : r.log.records) EXPECT_EQ(rec.params, expected);
  EXPECT_EQ(r.log.to_csv().substr(0, 46), "iteration,train_loss,val_miou,test_miou,params");
  EXPECT_EQ(r.checkpoint.metadata.at("iteration"), 7);
  EXPECT_EQ(r.checkpoint.metadata.at("seed"), 5);
  EXPECT_TRUE(r.checkpoint.metadata.contains("config_hash"));
}

TEST(TrainTest, ZeroIterationReinMatchesFreeze) {
  const auto rein = train(tiny_train(FineTuneMode::rein, 0), splits().data());
  const auto freeze = train(tiny_train(FineTuneMode::freeze, 0), splits().data());
  EXPECT_EQ(rein.log.records.back().test_miou, freeze.log.records.back().test_miou);
  EXPECT_EQ(rein.log.records.back().val_miou, freeze.log.records.back().val_miou);
}

TEST(TrainTest, FrozenModesKeepBackboneBytes) {
  for (auto mode : {FineTuneMode::freeze, FineTuneMode::rein, FineTuneMode::full}) {
    const TrainConfig cfg = tiny_train(mode);
    const Checkpoint before = SegModel(cfg.model, cfg.resolved_backbone_seed(), cfg.seed).to_checkpoint();
    const Checkpoint after = train(cfg, splits().data()).checkpoint;
    const std::string b = before.filter(Component::backbone).serialize();
    const std::string a = after.filter(Component::backbone).serialize();
    if (mode == FineTuneMode::full) {
      EXPECT_NE(a, b);
    } else {
      EXPECT_EQ(a, b) << mode_name(mode);
    }
    EXPECT_NE(after.filter(Component::head).serialize(), before.filter(Component::head).serialize());
  }
}

TEST(TrainTest, ReinGradientPartition) {
  SegModel model(tiny_model(FineTuneMode::rein), 1, 2);
  const auto& s = splits().train.samples[0];
  Tape tape;
  tape.backward(segmentation_loss(model.forward(image_tensor(s)).prediction, label_map(s)));
  for (const auto& p : model.parameters()) {
    if (p.component == Component::backbone) {
      EXPECT_FALSE(p.tensor.requires_grad()) << p.name;
      EXPECT_TRUE(p.tensor.grad().empty()) << p.name;
    } else {
      EXPECT_TRUE(p.tensor.requires_grad()) << p.name;
      EXPECT_FALSE(p.tensor.grad().empty()) << p.name;
    }
  }
}

TEST(TrainTest, LossDecreasesUnderGradientDescent) {
  SegModel model(tiny_model(FineTuneMode::rein), 3, 4);
  const auto& s = splits().train.samples[1];
  double previous = INFINITY;
  for (int step = 0; step < 10; ++step) {
    Tape tape;
    Tensor loss = segmentation_loss(model.forward(image_tensor(s)).prediction, label_map(s));
    EXPECT_LT(loss.item(), previous) << step;
    previous = loss.item();
    tape.backward(loss);
    for (const auto& p : model.trainable_parameters()) {
      Tensor t = p.tensor;
      auto g = t.grad();
      for (std::size_t i = 0; i < g.size(); ++i) t.data()[i] -= static_cast<Scalar>(1e-2) * g[i];
      t.zero_grad();
    }
  }
}

TEST(TrainTest, MemorizesSingleSample) {
  Dataset one = splits().train;
  one.samples.resize(1);
  // Patch 8 leaves a 4x4 token grid, too coarse to trace the shapes.
  TrainConfig cfg = tiny_train(FineTuneMode::full, 1000);
  cfg.model.vit.patch_size = 4;
  cfg.batch_size = 1;
  cfg.lr_backbone = 3e-4;
  cfg.lr_head_and_rein = 3e-3;
  cfg.weight_decay = 0;
  cfg.flip = false;
  cfg.eval_interval = 1000;
  cfg.loss_window = 10;
  const auto r = train(cfg, {&one, &one, nullptr});
  EXPECT_LT(r.final_train_loss, 0.1);
  EXPECT_GT(evaluate(r.checkpoint, one).mean, 0.8);
  EXPECT_EQ(r.log.records.back().val_miou, evaluate(r.checkpoint, one).mean);
}

TEST(TrainTest, UntrainedFreezeHeadIsNearChance) {
  const auto r = train(tiny_train(FineTuneMode::freeze, 0), splits().data());
  EXPECT_LT(r.log.records.back().test_miou, 2.0 / 6.0);
}

TEST(TrainTest, DivergenceKeepsPartialLog) {
  TrainConfig cfg = tiny_train(FineTuneMode::rein, 50);
  cfg.lr_head_and_rein = 1e30;
  cfg.eval_interval = 1;
  try {
    train(cfg, splits().data());
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_FALSE(e.partial_log.records.empty());
    EXPECT_EQ(e.partial_log.records.front().iteration, 0u);
  }
}

TEST(EvaluateTest, DeterministicAndThreadIndependent) {
  const auto r = train(tiny_train(FineTuneMode::rein), splits().data());
  const auto a = evaluate(r.checkpoint, splits().test, 1);
  const auto b = evaluate(r.checkpoint, splits().test, 1);
  const auto c = evaluate(r.checkpoint, splits().test, 3);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.per_class, c.per_class);
  EXPECT_EQ(a.mean, r.log.records.back().test_miou);
}

TEST(EvaluateTest, ClassCountMismatchIsConfigError) {
  const auto r = train(tiny_train(FineTuneMode::freeze, 0), splits().data());
  DatasetInfo info = tiny_info();
  info.num_classes = 4;
  info.domain = DomainSpec::source(4);
  EXPECT_THROW(evaluate(r.checkpoint, generate_dataset(info, "x", 2)), ConfigError);
  Checkpoint bare = r.checkpoint;
  bare.metadata = nullptr;
  EXPECT_THROW(evaluate(bare, splits().test), ConfigError);
}

TEST(SwapTest, SelfSwapIsIdentity) {
  const auto r = train(tiny_train(FineTuneMode::rein), splits().data());
  EXPECT_EQ(swap_adapter(r.checkpoint, r.checkpoint).serialize(), r.checkpoint.serialize());
}

TEST(SwapTest, PartitionAndFidelity) {
  TrainConfig cfg = tiny_train(FineTuneMode::rein);
  cfg.backbone_seed = 1;
  const auto a = train(cfg, splits().data()).checkpoint;
  cfg.seed = 77;
  const auto b = train(cfg, splits().data()).checkpoint;
  const auto s = swap_adapter(a, b);
  EXPECT_EQ(s.filter(Component::backbone).serialize(), a.filter(Component::backbone).serialize());
  EXPECT_EQ(s.filter(Component::adapter).serialize(), b.filter(Component::adapter).serialize());
  EXPECT_EQ(s.filter(Component::head).serialize(), b.filter(Component::head).serialize());
  EXPECT_EQ(evaluate(s, splits().test).mean, evaluate(b, splits().test).mean);
}

TEST(SwapTest, ShapeMismatchNamesTensor) {
  const auto a = train(tiny_train(FineTuneMode::rein, 0), splits().data()).checkpoint;
  TrainConfig other = tiny_train(FineTuneMode::rein, 0);
  other.model.rein.rank = 3;
  const auto b = train(other, splits().data()).checkpoint;
  EXPECT_NO_THROW(swap_adapter(a, a));
  Checkpoint bad = a;
  for (auto& t : bad.tensors) {
    if (t.name == "head.class.bias") {
      t.dims = {7};
      t.data.push_back(0);
    }
  }
  try {
    swap_adapter(a, bad);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("head.class.bias"), std::string::npos);
  }
  EXPECT_THROW(swap_adapter(a, b), ShapeError);
}

}  // namespace
}  // namespace reinlab
