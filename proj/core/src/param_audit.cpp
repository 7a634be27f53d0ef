#include "reinlab/param_audit.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "reinlab/errors.hpp"

REINLAB_NAMESPACE_BEGIN

namespace {

class RowBuilder {
 public:
  explicit RowBuilder(ParamReport& report) : report_(report) {}

  void add(std::string name, std::vector<std::size_t> shape, Component component) {
    std::uint64_t count = 1;
    for (auto d : shape) count *= d;
    report_.rows.push_back({std::move(name), std::move(shape), count, component});
    report_.total += count;
  }

 private:
  ParamReport& report_;
};

void enumerate_backbone(const ViTConfig& a, RowBuilder& rows) {
  const std::size_t c = a.dim, hd = a.dim * a.mlp_ratio;
  const std::size_t grid = a.image_size / a.patch_size;
  const auto B = Component::backbone;
  rows.add("backbone.patch_embed.weight", {3 * a.patch_size * a.patch_size, c}, B);
  rows.add("backbone.patch_embed.bias", {c}, B);
  rows.add("backbone.pos_embed", {grid * grid, c}, B);
  for (std::size_t i = 1; i <= a.depth; ++i) {
    const std::string p = "backbone." + layer_tag(i) + ".";
    rows.add(p + "ln1.gamma", {c}, B);
    rows.add(p + "ln1.beta", {c}, B);
    rows.add(p + "attn.qkv.weight", {c, 3 * c}, B);
    rows.add(p + "attn.qkv.bias", {3 * c}, B);
    rows.add(p + "attn.proj.weight", {c, c}, B);
    rows.add(p + "attn.proj.bias", {c}, B);
    rows.add(p + "ln2.gamma", {c}, B);
    rows.add(p + "ln2.beta", {c}, B);
    rows.add(p + "mlp.fc1.weight", {c, hd}, B);
    rows.add(p + "mlp.fc1.bias", {hd}, B);
    rows.add(p + "mlp.fc2.weight", {hd, c}, B);
    rows.add(p + "mlp.fc2.bias", {c}, B);
  }
}

void enumerate_adapter(std::size_t c, std::size_t n_layers, const ReinConfig& r, RowBuilder& rows) {
  const auto A = Component::adapter;
  const std::size_t m = r.tokens, rank = r.rank, cq = r.query_dim;
  for (std::size_t i = 1; i <= n_layers; ++i) {
    const std::string p = "adapter." + layer_tag(i) + ".";
    if (r.use_lora) {
      rows.add(p + "A", {m, rank}, A);
      rows.add(p + "B", {rank, c}, A);
    } else {
      rows.add(p + "T", {m, c}, A);
    }
  }
  const std::size_t copies = r.use_share ? 1 : n_layers;
  auto scope = [&](std::size_t i) {
    return "adapter." + (r.use_share ? std::string("shared") : layer_tag(i)) + ".";
  };
  for (std::size_t i = 1; i <= copies; ++i) {
    rows.add(scope(i) + "W_T", {c, c}, A);
    rows.add(scope(i) + "b_T", {c}, A);
  }
  for (std::size_t i = 1; i <= copies; ++i) {
    rows.add(scope(i) + "W_f", {c, c}, A);
    rows.add(scope(i) + "b_f", {c}, A);
  }
  if (r.use_link) {
    for (std::size_t i = 1; i <= copies; ++i) {
      rows.add(scope(i) + "W_Q", {c, cq}, A);
      rows.add(scope(i) + "b_Q", {cq}, A);
    }
    rows.add("adapter.query.W_cat", {3 * cq, cq}, A);
    rows.add("adapter.query.b_cat", {cq}, A);
  }
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s;
}

}  // namespace

std::string group_thousands(std::uint64_t value) {
  std::string digits = std::to_string(value);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

ParamReport count_trainable(const ViTConfig& arch, const ReinConfig& rein, FineTuneMode mode) {
  ParamReport report;
  report.mode = mode;
  RowBuilder rows(report);
  switch (mode) {
    case FineTuneMode::freeze:
      report.label = "freeze";
      break;
    case FineTuneMode::full:
      arch.validate();
      report.label = "full";
      enumerate_backbone(arch, rows);
      break;
    case FineTuneMode::rein: {
      ReinConfig r = rein;
      r.dim = arch.dim;
      r.layers = arch.depth;
      r.validate();
      report.label = r.label();
      enumerate_adapter(arch.dim, arch.depth, r, rows);
      break;
    }
  }
  return report;
}

std::uint64_t ParamReport::total_for(Component component) const {
  std::uint64_t n = 0;
  for (const auto& row : rows) {
    if (row.component == component) n += row.count;
  }
  return n;
}

std::string ParamReport::to_text() const {
  std::size_t name_w = 4, shape_w = 5;
  for (const auto& row : rows) {
    name_w = std::max(name_w, row.name.size());
    shape_w = std::max(shape_w, shape_text(row.shape).size());
  }
  std::ostringstream os;
  char line[512];
  os << "trainable parameters: " << label << " (mode " << mode_name(mode) << ")\n";
  std::snprintf(line, sizeof(line), "%-*s  %-*s  %14s  %s\n", static_cast<int>(name_w), "name",
                static_cast<int>(shape_w), "shape", "count", "component");
  os << line;
  for (const auto& row : rows) {
    std::snprintf(line, sizeof(line), "%-*s  %-*s  %14s  %s\n", static_cast<int>(name_w),
                  row.name.c_str(), static_cast<int>(shape_w), shape_text(row.shape).c_str(),
                  group_thousands(row.count).c_str(), std::string(component_name(row.component)).c_str());
    os << line;
  }
  for (auto c : {Component::backbone, Component::adapter}) {
    os << component_name(c) << " total: " << group_thousands(total_for(c)) << "\n";
  }
  std::snprintf(line, sizeof(line), "total: %s (%.2fM)\n", group_thousands(total).c_str(),
                static_cast<double>(total) / 1e6);
  os << line;
  if (mode == FineTuneMode::rein) {
    os << "note: the link terms (c*c' + c' per query MLP, 3c'*c' + c' for the merge) are the only\n"
          "      c'-dependent rows; c' = 256 is the positive root that yields 2,990,080 at\n"
          "      c=1024, N=24 and 4,510,720 at c=1280, N=32 (m=100, r=16).\n";
  }
  return os.str();
}

std::string ParamReport::to_csv() const {
  std::ostringstream os;
  os << "name,shape,count,component\n";
  for (const auto& row : rows) {
    os << row.name << ',' << shape_text(row.shape) << ',' << row.count << ','
       << component_name(row.component) << '\n';
  }
  os << "TOTAL,," << total << ",\n";
  return os.str();
}

REINLAB_NAMESPACE_END
