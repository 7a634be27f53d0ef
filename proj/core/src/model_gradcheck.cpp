#include "reinlab/model_gradcheck.hpp"

#include <algorithm>

#include "reinlab/gradcheck.hpp"
#include "reinlab/rng.hpp"

REINLAB_NAMESPACE_BEGIN

ModelConfig gradcheck_toy_config() {
  ModelConfig c;
  c.vit.image_size = 4;
  c.vit.patch_size = 2;
  c.vit.depth = 2;
  c.vit.dim = 8;
  c.vit.heads = 2;
  c.vit.mlp_ratio = 2;
  c.vit.tap_layers = {1, 2};
  c.rein.tokens = 4;
  c.rein.rank = 2;
  c.rein.query_dim = 4;
  c.head.num_classes = 3;
  c.head.embed_dim = 4;
  c.head.num_queries = 4;
  c.head.query_dim = 4;
  c.mode = FineTuneMode::rein;
  return c;
}

GradcheckReport model_gradcheck(const ModelConfig& config, std::uint64_t seed, double step) {
  config.validate();
  Rng rng = Rng(seed).fork("gradcheck");
  SegModel model(config, seed, seed);
  const auto params = model.trainable_parameters();
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (auto& v : t.data()) v += static_cast<Scalar>(rng.uniform(-0.3, 0.3));
  }

  const std::size_t size = config.vit.image_size;
  Tensor image({3, size, size});
  for (auto& v : image.data()) v = static_cast<Scalar>(rng.uniform01());
  std::vector<std::uint8_t> labels(size * size);
  for (auto& l : labels) {
    l = static_cast<std::uint8_t>(rng.uniform_int(0, static_cast<std::int64_t>(config.head.num_classes) - 1));
  }

  std::vector<std::vector<Scalar>> analytic;
  {
    Tape tape;
    const Tensor loss = segmentation_loss(model.forward(image).prediction, labels);
    tape.backward(loss);
    for (const auto& p : params) {
      const auto g = p.tensor.grad();
      if (g.empty()) {
        analytic.emplace_back(p.tensor.size(), Scalar(0));
      } else {
        analytic.emplace_back(g.begin(), g.end());
      }
    }
  }

  auto objective = [&](const Tensor&) {
    NoGradGuard no_grad;
    return static_cast<double>(segmentation_loss(model.forward(image).prediction, labels).item());
  };

  GradcheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor x = params[i].tensor;
    const Tensor numeric = finite_difference_gradient(objective, x, step);
    GradcheckEntry e;
    e.name = params[i].name;
    e.component = params[i].component;
    e.scalars = x.size();
    e.max_relative_error = max_relative_error(analytic[i], numeric.data());
    report.max_relative_error = std::max(report.max_relative_error, e.max_relative_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

REINLAB_NAMESPACE_END
