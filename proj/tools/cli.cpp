#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "reinlab/errors.hpp"
#include "reinlab/gradcheck_suite.hpp"
#include "reinlab/param_audit.hpp"
#include "reinlab/train.hpp"

namespace reinlab::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kTrainKeys =
    "required keys: train_dir\n"
    "optional keys: val_dir, test_dir, model {vit, rein, head, mode}, iterations, batch_size, lr_backbone,\n"
    "  lr_head_and_rein, weight_decay, seed, backbone_seed, eval_interval, loss_window, flip";

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw Error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void snapshot(const fs::path& dir, const std::string& command, json resolved) {
  resolved["command"] = command;
  write_text(dir / (command + ".resolved.json"), resolved.dump(2) + "\n");
}

std::string format_report(const IoUReport& r) {
  std::string s;
  char line[96];
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    if (r.per_class[k]) {
      std::snprintf(line, sizeof(line), "class %2zu  IoU %.4f\n", k, *r.per_class[k]);
    } else {
      std::snprintf(line, sizeof(line), "class %2zu  IoU    n/a\n", k);
    }
    s += line;
  }
  std::snprintf(line, sizeof(line), "mIoU %.4f\n", r.mean);
  return s + line;
}

json report_json(const IoUReport& r) {
  json per = json::array();
  for (const auto& v : r.per_class) per.push_back(v ? json(*v) : json(nullptr));
  return {{"per_class", per}, {"miou", r.mean}};
}

struct Global {
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
};

struct GenDataArgs {
  std::string out;
  std::size_t classes = 6;
  std::size_t size = 64;
  std::size_t train = 200, val = 50, test = 50;
};

int gen_data(const GenDataArgs& a, const Global& g, std::ostream& out) {
  DatasetInfo info;
  info.num_classes = a.classes;
  info.height = info.width = a.size;
  info.base_seed = g.seed.value_or(0);
  const fs::path root(a.out);
  struct Split {
    const char* name;
    std::size_t count;
    bool target;
  };
  for (const Split s : {Split{"train", a.train, false}, Split{"val", a.val, false}, Split{"test", a.test, true}}) {
    info.domain = s.target ? DomainSpec::target(a.classes) : DomainSpec::source(a.classes);
    write_dataset(root / s.name, generate_dataset(info, s.name, s.count));
    out << "wrote " << s.count << " " << (s.target ? "target" : "source") << " scenes to "
        << (root / s.name).string() << "\n";
  }
  snapshot(root, "gen-data",
           {{"seed", info.base_seed}, {"num_classes", a.classes}, {"size", a.size},
            {"counts", {{"train", a.train}, {"val", a.val}, {"test", a.test}}},
            {"source", DomainSpec::source(a.classes)}, {"target", DomainSpec::target(a.classes)}});
  return kExitOk;
}

struct TrainArgs {
  std::string config;
  std::string out = "run";
  std::optional<std::size_t> iterations;
  std::optional<std::string> mode;
  std::optional<std::string> variant;
  std::optional<std::string> train_dir, val_dir, test_dir;
};

int train_cmd(const TrainArgs& a, const Global& g, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    try {
      cfg = read_json(a.config).get<TrainConfig>();
    } catch (const ConfigError& e) {
      throw UsageError(std::string(e.what()) + "\n" + kTrainKeys);
    } catch (const json::exception& e) {
      throw UsageError(a.config + ": " + e.what() + "\n" + kTrainKeys);
    }
  }
  if (g.seed) cfg.seed = *g.seed;
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.mode) cfg.model.mode = parse_mode(*a.mode);
  if (a.variant) cfg.model.rein.apply_variant(parse_variant(*a.variant));
  if (a.train_dir) cfg.train_dir = *a.train_dir;
  if (a.val_dir) cfg.val_dir = *a.val_dir;
  if (a.test_dir) cfg.test_dir = *a.test_dir;
  if (cfg.train_dir.empty()) {
    throw UsageError(std::string(a.config.empty() ? "no config given" : "config incomplete") + "\n" +
                     kTrainKeys);
  }
  cfg.validate();

  const fs::path dir(a.out);
  fs::create_directories(dir);
  snapshot(dir, "train", json(cfg));
  try {
    const auto result = train(cfg);
    result.checkpoint.save(dir / "checkpoint.bin");
    write_text(dir / "metrics.csv", result.log.to_csv());
    if (g.verbosity > 0) out << result.log.to_csv();
    const auto& last = result.log.records.back();
    char line[200];
    std::snprintf(line, sizeof(line),
                  "mode %s: %zu iterations, train loss %.4f, val mIoU %.4f, test mIoU %.4f, %llu trainable params\n",
                  std::string(mode_name(cfg.model.mode)).c_str(), last.iteration, last.train_loss,
                  last.val_miou, last.test_miou, static_cast<unsigned long long>(last.params));
    out << line;
  } catch (const TrainingDiverged& e) {
    write_text(dir / "metrics.csv", e.partial_log.to_csv());
    err << "error: " << e.what() << " (partial metrics in " << (dir / "metrics.csv").string() << ")\n";
    return kExitFailure;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, out;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const auto ckpt = Checkpoint::load(a.checkpoint);
  const auto ds = read_dataset(a.data);
  const auto report = evaluate(ckpt, ds, threads_from_env());
  out << format_report(report);
  if (!a.out.empty()) {
    const fs::path dir(a.out);
    write_text(dir / "eval.json", report_json(report).dump(2) + "\n");
    snapshot(dir, "eval", {{"checkpoint", a.checkpoint}, {"data", a.data}, {"threads", threads_from_env()}});
  }
  return kExitOk;
}

struct AuditArgs {
  std::size_t c = 1024, layers = 24, m = 100, r = 16, c_prime = 256;
  std::string variant = "rein-lora";
  std::string mode = "rein";
  bool csv = false;
  std::string out;
};

int audit_cmd(const AuditArgs& a, std::ostream& out) {
  ViTConfig arch;
  arch.dim = a.c;
  arch.depth = a.layers;
  arch.heads = 1;
  arch.tap_layers = ViTConfig::default_taps(a.layers);
  ReinConfig rein;
  rein.tokens = a.m;
  rein.rank = a.r;
  rein.query_dim = a.c_prime;
  rein.apply_variant(parse_variant(a.variant));
  const auto report = count_trainable(arch, rein, parse_mode(a.mode));
  out << (a.csv ? report.to_csv() : report.to_text());
  if (!a.out.empty()) {
    const fs::path dir(a.out);
    write_text(dir / "audit.csv", report.to_csv());
    write_text(dir / "audit.txt", report.to_text());
    snapshot(dir, "audit-params",
             {{"c", a.c}, {"layers", a.layers}, {"m", a.m}, {"r", a.r}, {"c_prime", a.c_prime},
              {"variant", a.variant}, {"mode", a.mode}});
  }
  return kExitOk;
}

int gradcheck_cmd(const Global& g, std::ostream& out) {
  constexpr double kTolerance = 1e-3;
  const auto r = run_gradcheck_suite(g.seed.value_or(0));
  char line[200];
  for (const auto& e : r.entries) {
    if (g.verbosity == 0) continue;
    std::snprintf(line, sizeof(line), "%-12s %-28s %-8s %4zu  %.3e\n", e.config.c_str(), e.name.c_str(),
                  e.component.c_str(), e.scalars, e.max_relative_error);
    out << line;
  }
  std::snprintf(line, sizeof(line), "checked %zu tensors, max relative error %.3e (tolerance %.0e)\n",
                r.entries.size(), r.max_relative_error, kTolerance);
  out << line;
  return r.max_relative_error <= kTolerance ? kExitOk : kExitFailure;
}

struct SwapArgs {
  std::string base, donor, out;
};

int swap_cmd(const SwapArgs& a, std::ostream& out) {
  const auto swapped = swap_adapter(Checkpoint::load(a.base), Checkpoint::load(a.donor));
  const fs::path path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  swapped.save(path);
  snapshot(path.has_parent_path() ? path.parent_path() : fs::path("."), "swap-adapter",
           {{"base", a.base}, {"donor", a.donor}, {"out", a.out}});
  out << "wrote " << path.string() << " (" << swapped.tensors.size() << " tensors)\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"reinlab: Rein adapters for plain vision transformers at desk scale", "reinlab"};
  app.require_subcommand(1);
  app.fallthrough();
  Global g;
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Seed for all randomness")->each([&](const std::string&) { g.seed = seed; });
  app.add_flag("-v,--verbose", g.verbosity, "More output (repeatable)");

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate source train/val and target test splits");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--classes", gen.classes, "Number of classes K")->check(CLI::Range(3, 254));
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")->check(CLI::Range(4, 4096));
  gen_cmd->add_option("--train", gen.train, "Training scenes");
  gen_cmd->add_option("--val", gen.val, "Validation scenes");
  gen_cmd->add_option("--test", gen.test, "Target-domain test scenes");

  TrainArgs tr;
  auto* train_sc = app.add_subcommand("train", "Fine-tune in full, freeze or rein mode");
  train_sc->add_option("--config", tr.config, "JSON training config");
  train_sc->add_option("--out", tr.out, "Output directory");
  train_sc->add_option("--iterations", tr.iterations, "Override iteration count");
  train_sc->add_option("--mode", tr.mode, "full | freeze | rein");
  train_sc->add_option("--variant", tr.variant, "rein-core | rein-link | rein-share | rein-lora");
  train_sc->add_option("--train-dir", tr.train_dir, "Training split");
  train_sc->add_option("--val-dir", tr.val_dir, "Validation split");
  train_sc->add_option("--test-dir", tr.test_dir, "Target test split");

  EvalArgs ev;
  auto* eval_sc = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval_sc->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_sc->add_option("--data", ev.data, "Dataset directory")->required();
  eval_sc->add_option("--out", ev.out, "Directory for eval.json");

  AuditArgs au;
  auto* audit_sc = app.add_subcommand("audit-params", "Count trainable parameters in closed form");
  audit_sc->add_option("--c", au.c, "Backbone width c");
  audit_sc->add_option("--layers", au.layers, "Layer count N");
  audit_sc->add_option("--m", au.m, "Token length m");
  audit_sc->add_option("--r", au.r, "Low-rank dimension r");
  audit_sc->add_option("--c-prime", au.c_prime, "Query width c'");
  audit_sc->add_option("--variant", au.variant, "rein-core | rein-link | rein-share | rein-lora");
  audit_sc->add_option("--mode", au.mode, "full | freeze | rein");
  audit_sc->add_flag("--csv", au.csv, "Print CSV instead of a table");
  audit_sc->add_option("--out", au.out, "Directory for audit.csv and audit.txt");

  auto* grad_sc = app.add_subcommand("gradcheck", "Finite-difference check of adapter and head gradients");

  SwapArgs sw;
  auto* swap_sc = app.add_subcommand("swap-adapter", "Combine a backbone with another run's adapter and head");
  swap_sc->add_option("--base", sw.base, "Checkpoint providing the backbone")->required();
  swap_sc->add_option("--donor", sw.donor, "Checkpoint providing adapter and head")->required();
  swap_sc->add_option("--out", sw.out, "Output checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen, g, out);
    if (*train_sc) return train_cmd(tr, g, out, err);
    if (*eval_sc) return eval_cmd(ev, out);
    if (*audit_sc) return audit_cmd(au, out);
    if (*grad_sc) return gradcheck_cmd(g, out);
    if (*swap_sc) return swap_cmd(sw, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace reinlab::cli
