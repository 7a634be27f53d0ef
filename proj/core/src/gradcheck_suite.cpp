#include "reinlab/gradcheck_suite.hpp"

#include <algorithm>

#include "reinlab/model_gradcheck.hpp"

namespace reinlab {

GradcheckSuiteResult run_gradcheck_suite(std::uint64_t seed, double step) {
  GradcheckSuiteResult result;
  for (auto variant : {f64::ReinVariant::lora, f64::ReinVariant::link, f64::ReinVariant::core}) {
    f64::ModelConfig config = f64::gradcheck_toy_config();
    config.rein.apply_variant(variant);
    const auto report = f64::model_gradcheck(config, seed, step);
    for (const auto& e : report.entries) {
      result.entries.push_back({config.rein.label(), e.name,
                                std::string(f64::component_name(e.component)), e.scalars,
                                e.max_relative_error});
    }
    result.max_relative_error = std::max(result.max_relative_error, report.max_relative_error);
  }
  return result;
}

}  // namespace reinlab
