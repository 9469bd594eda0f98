#include "cli.hpp"

#include <chrnn/checkpoint.hpp>
#include <chrnn/config.hpp>
#include <chrnn/data.hpp>
#include <chrnn/errors.hpp>
#include <chrnn/log.hpp>
#include <chrnn/model.hpp>
#include <chrnn/train.hpp>
#include <chrnn/verify.hpp>

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace chrnn::cli {

namespace {

namespace fs = std::filesystem;

// Options shared by the subcommands that build a run configuration.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<std::size_t> epochs;
  std::string cell, scales, task, out, variant;
  std::string train_images, train_labels, val_images, val_labels;

  void attach(CLI::App* app, bool data_flags) {
    app->add_option("--config", config_path, "Config file (key = value with [sections])");
    app->add_option("--set", sets, "Override a dotted key, e.g. --set train.lr=0.05");
    app->add_option("--seed", seed, "Training seed");
    app->add_option("--threads", threads, "Worker threads for the directional scans (default 1)");
    app->add_option("--cell", cell, "Recurrent cell: srn or lstm");
    app->add_option("--scales", scales, "Scale list, e.g. 1,2,3,6");
    app->add_option("--variant", variant, "hrnn, mrnn or spp");
    if (!data_flags) return;
    app->add_option("--epochs", epochs, "Number of epochs");
    app->add_option("--task", task, "Dataset: synthetic or idx");
    app->add_option("--out", out, "Output directory");
    app->add_option("--train-images", train_images, "IDX training images");
    app->add_option("--train-labels", train_labels, "IDX training labels");
    app->add_option("--val-images", val_images, "IDX validation images");
    app->add_option("--val-labels", val_labels, "IDX validation labels");
  }

  ConfigMap overrides(ConfigMap map) const {
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) {
        throw ConfigError("--set expects key=value, got '" + s + "'");
      }
      map.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) map.set("train.seed", std::to_string(*seed));
    if (threads) map.set("train.threads", std::to_string(*threads));
    if (epochs) map.set("train.epochs", std::to_string(*epochs));
    const std::pair<const char*, const std::string*> flags[] = {
        {"model.cell", &cell},           {"model.scales", &scales},
        {"model.variant", &variant},     {"data.task", &task},
        {"out", &out},                   {"data.train_images", &train_images},
        {"data.train_labels", &train_labels}, {"data.val_images", &val_images},
        {"data.val_labels", &val_labels},
    };
    for (const auto& [key, value] : flags)
      if (!value->empty()) map.set(key, *value);
    return map;
  }

  ConfigMap effective_map(const ConfigMap& base = {}) const {
    ConfigMap map = base;
    if (!config_path.empty()) {
      for (const auto& [k, v] : ConfigMap::load(config_path).values()) map.set(k, v);
    }
    return overrides(map);
  }
};

void echo_config(const RunConfig& config, const std::string& command) {
  log_info(command + ": effective configuration (seed " + std::to_string(config.train.seed) + ")");
  std::istringstream text(to_config_map(config).to_text());
  for (std::string line; std::getline(text, line);) log_info("  " + line);
}

struct LoadedData {
  Dataset train;
  Dataset val;
  std::optional<Tensor<float>> mean;
};

// Loads datasets per `config.data`; IDX data is mean-subtracted with `mean`
// when given, else with the training mean.
LoadedData load_data(const RunConfig& config, bool need_train,
                     const Tensor<float>* mean = nullptr) {
  LoadedData d;
  const auto& dc = config.data;
  if (dc.task == "synthetic") {
    if (need_train) d.train = gen_context_task(dc.synthetic_train, dc.synthetic_seed, "train");
    if (dc.synthetic_val > 0) d.val = gen_context_task(dc.synthetic_val, dc.synthetic_seed + 1, "val");
    return d;
  }
  if (need_train) {
    if (dc.train_images.empty() || dc.train_labels.empty()) {
      throw DataError("idx task needs data.train_images and data.train_labels");
    }
    d.train = load_idx(dc.train_images, dc.train_labels, "train", config.model.classes);
    d.mean = mean ? *mean : pixel_mean(d.train);
    subtract_mean(d.train, *d.mean);
  } else if (mean) {
    d.mean = *mean;
  }
  if (!dc.val_images.empty() || !dc.val_labels.empty()) {
    if (dc.val_images.empty() || dc.val_labels.empty()) {
      throw DataError("validation data needs both data.val_images and data.val_labels");
    }
    d.val = load_idx(dc.val_images, dc.val_labels, "val", config.model.classes);
    if (!d.mean) throw DataError("no pixel mean available for the validation set");
    subtract_mean(d.val, *d.mean);
  }
  return d;
}

// IDX inputs define the image geometry and class count unless set explicitly.
void adopt_data_geometry(RunConfig& config, const ConfigMap& map, const Dataset& train) {
  if (!map.get("model.in_channels")) config.model.in_channels = train.channels();
  if (!map.get("model.in_height")) config.model.in_height = train.height();
  if (!map.get("model.in_width")) config.model.in_width = train.width();
  if (!map.get("model.classes")) config.model.classes = train.classes;
  config.model.conv = parse_conv_stack(format_conv_stack(config.model.conv), config.model.in_channels);
}

int cmd_train(const ConfigFlags& flags, const std::string& resume, std::ostream& out) {
  const ConfigMap map = flags.effective_map();
  RunConfig config = apply_config(map);
  LoadedData data = load_data(config, true);
  if (config.data.task == "idx") adopt_data_geometry(config, map, data.train);
  config.model.validate();
  config.train.validate();
  echo_config(config, "train");

  fs::create_directories(config.out);
  const std::string config_text = to_config_map(config).to_text();
  {
    std::ofstream f(fs::path(config.out) / "config.txt");
    f << config_text;
  }

  Model<float> model(config.model, config.train.seed);
  Trainer trainer(model, data.train, data.val.size() ? &data.val : nullptr, config.train);
  if (!resume.empty()) {
    const Checkpoint ckpt = read_checkpoint(resume);
    restore_model(ckpt, model);
    restore_trainer(ckpt, model, trainer);
    log_info("resumed from " + resume + " at step " + std::to_string(trainer.state().step));
  }

  const fs::path log_path = fs::path(config.out) / "metrics.log";
  std::ofstream metrics(log_path, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!metrics) throw DataError("cannot write " + log_path.string());
  const fs::path ckpt_path = fs::path(config.out) / "model.ckpt";
  const Tensor<float>* mean = data.mean ? &*data.mean : nullptr;

  while (trainer.state().epoch < config.train.epochs) {
    do {
      trainer.step();
    } while (!trainer.epoch_complete());
    for (const auto& m : trainer.finish_epoch()) {
      out << m.format() << '\n' << std::flush;
      metrics << m.format() << '\n' << std::flush;
    }
    write_checkpoint(ckpt_path.string(), capture_checkpoint(model, &trainer, mean, config_text));
  }
  if (config.train.epochs == 0) {
    write_checkpoint(ckpt_path.string(), capture_checkpoint(model, &trainer, mean, config_text));
  }
  log_info("checkpoint written to " + ckpt_path.string());
  return kOk;
}

int cmd_evaluate(const ConfigFlags& flags, const std::string& checkpoint, std::ostream& out) {
  const Checkpoint ckpt = read_checkpoint(checkpoint);
  const ConfigMap saved = ConfigMap::parse(ckpt.config, checkpoint);
  const ConfigMap map = flags.effective_map(saved);
  RunConfig config = apply_config(map);
  echo_config(config, "evaluate");
  LoadedData data = load_data(config, false, ckpt.find("data.mean"));
  if (data.val.size() == 0) throw DataError("no evaluation data (set data.val_images/labels)");

  Model<float> model(config.model, config.train.seed);
  restore_model(ckpt, model);
  const EvalResult r = evaluate(model, data.val);
  Metrics m{0, "val", r.loss, r.top1, r.top5, 0.0};
  out << m.format() << '\n';
  return kOk;
}

int cmd_gradcheck(const std::string& cell, const std::string& scales, std::size_t hidden,
                  std::size_t classes, std::uint64_t seed, bool corrupt, std::ostream& out) {
  const auto grids = parse_grid_list(scales);
  for (const auto& g : grids) {
    if (g.rows > 4 || g.cols > 4) {
      throw ConfigError("gradcheck grids are limited to 4x4, got " + to_string(g));
    }
  }
  if (hidden < 1 || hidden > 8) throw ConfigError("gradcheck hidden size must be in 1..8");
  const ModelConfig config = gradcheck_model_config(parse_cell_kind(cell), grids, hidden, classes);
  log_info("gradcheck: cell=" + cell + " scales=" + scales + " hidden=" + std::to_string(hidden) +
           " classes=" + std::to_string(classes) + " seed=" + std::to_string(seed));
  ModelGradcheckOptions options;
  options.seed = seed;
  options.backward.corrupt_row_recurrence = corrupt;
  bool ok = true;
  for (const auto& r : gradcheck_model(config, options)) {
    out << r.describe() << '\n';
    ok = ok && r.passed;
  }
  if (!ok) {
    out << "gradcheck FAILED\n";
    return kVerificationFailed;
  }
  out << "gradcheck passed\n";
  return kOk;
}

int cmd_audit(const ConfigFlags& flags, bool reference, const std::string& cell, std::ostream& out) {
  HrnnConfig h;
  if (reference) {
    h = reference_audit_config(parse_cell_kind(cell.empty() ? "srn" : cell));
  } else {
    ConfigFlags f = flags;
    f.cell = cell;
    const RunConfig config = apply_config(f.effective_map());
    echo_config(config, "audit");
    config.model.validate();
    h = config.model.hrnn();
  }
  out << format_audit(count_parameters(h)) << '\n';
  return kOk;
}

int cmd_degencheck(std::size_t pyramids, std::uint64_t seed, bool perturb, bool zero,
                   std::ostream& out) {
  DegeneracyOptions options;
  options.pyramids = pyramids;
  options.seed = seed;
  options.perturb_recurrent = perturb;
  options.zero_input = zero;
  log_info("degencheck: pyramids=" + std::to_string(pyramids) + " seed=" + std::to_string(seed));
  const DegeneracyReport r = degeneracy_check(options);
  out << "pyramids=" << r.pyramids << " max_abs_deviation=" << r.max_abs_deviation << '\n';
  if (r.max_abs_deviation > 1e-6) {
    out << "degencheck FAILED\n";
    return kVerificationFailed;
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Convolutional hierarchical recurrent networks"};
  app.require_subcommand(1);

  ConfigFlags train_flags, eval_flags, audit_flags;
  std::string resume, checkpoint;
  auto* train = app.add_subcommand("train", "Train a model and write metrics and a checkpoint");
  train_flags.attach(train, true);
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  eval_flags.attach(evaluate_cmd, true);
  evaluate_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();

  std::string gc_cell = "srn", gc_scales = "1,3";
  std::size_t gc_hidden = 6, gc_classes = 3;
  std::uint64_t gc_seed = 1;
  bool gc_corrupt = false;
  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference check of all gradients");
  gradcheck_cmd->add_option("--cell", gc_cell, "srn or lstm");
  gradcheck_cmd->add_option("--scales", gc_scales, "Scale list, grids up to 4x4");
  gradcheck_cmd->add_option("--hidden", gc_hidden, "Hidden size = feature depth, at most 8");
  gradcheck_cmd->add_option("--classes", gc_classes, "Number of classes");
  gradcheck_cmd->add_option("--seed", gc_seed, "Seed");
  gradcheck_cmd->add_flag("--corrupt-backward", gc_corrupt,
                          "Test hook: drop the row-recurrence gradient");

  bool reference = false;
  auto* audit = app.add_subcommand("audit", "Count recurrent-layer matrices and parameters");
  audit_flags.attach(audit, false);
  audit->add_flag("--paper", reference, "H = D = 256 over scales 1,2,3,6");

  std::size_t pyramids = 100;
  std::uint64_t dg_seed = 1;
  bool perturb = false, zero = false;
  auto* degen = app.add_subcommand("degencheck", "Check the degenerate-configuration identity");
  degen->add_option("--pyramids", pyramids, "Number of random pyramids");
  degen->add_option("--seed", dg_seed, "Seed");
  degen->add_flag("--perturb", perturb, "Negative control: one nonzero recurrent entry");
  degen->add_flag("--zero-input", zero, "Use all-zero pyramids");

  std::vector<const char*> argv{"chrnn"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*train) return cmd_train(train_flags, resume, out);
    if (*evaluate_cmd) return cmd_evaluate(eval_flags, checkpoint, out);
    if (*gradcheck_cmd)
      return cmd_gradcheck(gc_cell, gc_scales, gc_hidden, gc_classes, gc_seed, gc_corrupt, out);
    if (*audit) return cmd_audit(audit_flags, reference, audit_flags.cell, out);
    if (*degen) return cmd_degencheck(pyramids, dg_seed, perturb, zero, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kDataError;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kDataError;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace chrnn::cli
