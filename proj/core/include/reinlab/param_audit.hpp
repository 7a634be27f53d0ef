#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "reinlab/model.hpp"

REINLAB_NAMESPACE_BEGIN

struct AuditRow {
  std::string name;
  std::vector<std::size_t> shape;
  std::uint64_t count = 0;
  Component component = Component::adapter;
};

struct ParamReport {
  std::string label;
  FineTuneMode mode = FineTuneMode::rein;
  std::vector<AuditRow> rows;
  std::uint64_t total = 0;

  std::uint64_t total_for(Component component) const;
  // Aligned table with per-component totals and a footer on c'.
  std::string to_text() const;
  // name,shape,count,component rows followed by a TOTAL row.
  std::string to_csv() const;
};

// Closed-form enumeration of the trainable tensors a model would expose in
// the backbone and adapter for the given mode. The decode head is not
// counted. In rein mode only arch.dim and arch.depth matter.
ParamReport count_trainable(const ViTConfig& arch, const ReinConfig& rein, FineTuneMode mode);

// 1234567 -> "1,234,567"
std::string group_thousands(std::uint64_t value);

REINLAB_NAMESPACE_END
