#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "jointvit/checkpoint.hpp"
#include "jointvit/config.hpp"
#include "jointvit/cross_validation.hpp"
#include "jointvit/image_io.hpp"
#include "jointvit/metrics.hpp"
#include "jointvit/model_check.hpp"
#include "jointvit/synth.hpp"
#include "jointvit/train.hpp"

namespace jointvit::cli {

namespace fs = std::filesystem;

inline constexpr const char* kTrainLogHeader = "step,epoch,joint_loss,bce_loss,mse_loss,grad_norm";

/// Parsed command line. Optional fields are only set when the flag was given.
struct Options {
  std::string command;
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  std::optional<std::string> data;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> fold;
  std::optional<std::string> resume;
  std::optional<std::string> checkpoint;
  std::optional<double> lambda;
  std::optional<std::string> variant;
  std::string lambdas;
  std::string variants = "bce";
};

/// flags > file > defaults.
inline RunConfig resolve_config(const Options& opt) {
  RunConfig cfg;
  if (opt.config_path) merge_json(cfg, read_json_file(*opt.config_path));
  if (opt.seed) {
    cfg.protocol.seed = *opt.seed;
    cfg.data.synthetic.seed = *opt.seed;
  }
  if (opt.out) cfg.output = *opt.out;
  if (opt.data) {
    cfg.data.source = DataSource::Folder;
    cfg.data.folder = *opt.data;
  }
  if (opt.epochs) cfg.protocol.epochs = *opt.epochs;
  if (opt.lambda) cfg.loss.lambda = *opt.lambda;
  if (opt.variant) cfg.loss.variant = parse_variant(*opt.variant);
  return cfg;
}

inline Dataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.source == DataSource::Synthetic) return synth_longtail(cfg.data.synthetic);
  FolderIngestOptions io;
  io.manifest = cfg.data.manifest;
  io.image_size = cfg.model.image_size;
  io.slice_stride = cfg.data.slice_stride;
  return load_image_folder(cfg.data.folder, io);
}

inline fs::path prepare_output(const RunConfig& cfg) {
  const fs::path out = cfg.output;
  std::error_code ec;
  fs::create_directories(out, ec);
  require(!ec && fs::is_directory(out), ErrorKind::Io,
          "cannot create output directory '" + out.string() + "'");
  write_text_file(out / "config.json", to_json(cfg).dump(2) + "\n");
  return out;
}

inline std::string format_counts(const ClassCounts& c) {
  std::ostringstream s;
  for (std::size_t i = 0; i < c.size(); ++i)
    s << (i ? ", " : "") << class_name(static_cast<SaO2Class>(i)) << '=' << c[i];
  return s.str();
}

inline Json report_json(const MetricsReport& r) {
  Json per_class = Json::array();
  for (std::size_t c = 0; c < r.per_class_recall.size(); ++c)
    per_class.push_back({{"class", std::string(class_name(static_cast<SaO2Class>(c)))},
                         {"recall", r.per_class_recall[c]},
                         {"specificity", r.per_class_specificity[c]}});
  Json cm = Json::array();
  for (std::size_t t = 0; t < r.confusion.num_classes(); ++t) {
    Json row = Json::array();
    for (std::size_t p = 0; p < r.confusion.num_classes(); ++p) row.push_back(r.confusion.at(t, p));
    cm.push_back(row);
  }
  return {{"fold", r.fold_id},
          {"accuracy", r.accuracy},
          {"macro_sensitivity", r.macro_sensitivity},
          {"macro_specificity", r.macro_specificity},
          {"per_class", per_class},
          {"confusion", cm}};
}

inline Json summary_json(const AggregateMetrics& a) {
  auto s = [](const MetricSummary& m) { return Json{{"mean", m.mean}, {"std", m.std}}; };
  return {{"accuracy", s(a.accuracy)},
          {"sensitivity", s(a.sensitivity)},
          {"specificity", s(a.specificity)}};
}

inline void print_report(std::ostream& out, const MetricsReport& r) {
  out << "accuracy " << format_number(r.accuracy) << "  sensitivity "
      << format_number(r.macro_sensitivity) << "  specificity "
      << format_number(r.macro_specificity) << '\n';
}

/// The test instances of one fold, drawn from the same split run_cv uses.
inline Dataset fold_test_set(const Dataset& dataset, const RunConfig& cfg, std::size_t fold) {
  const auto folds = cv_folds(dataset, cfg.protocol.k, cfg.protocol.seed);
  require(fold < folds.size(), ErrorKind::Config,
          "--fold " + std::to_string(fold) + " out of range for k=" + std::to_string(folds.size()));
  const std::set<std::string> ids(folds[fold].begin(), folds[fold].end());
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (ids.contains(dataset[i].instance_id)) idx.push_back(i);
  return dataset.subset(idx);
}

inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  require(cfg.data.source == DataSource::Synthetic, ErrorKind::Config,
          "synth requires data.source = synthetic");
  const fs::path dir = prepare_output(cfg);
  Dataset ds = synth_longtail(cfg.data.synthetic);
  write_image_folder(ds, dir / "data", cfg.data.manifest);
  out << "wrote " << ds.size() << " instances to " << (dir / "data").string() << " ("
      << format_counts(ds.class_counts()) << ")\n";
  return 0;
}

inline int cmd_train(RunConfig cfg, const Options& opt, std::ostream& out) {
  const Dataset dataset = load_dataset(cfg);
  require(!dataset.empty(), ErrorKind::Contract, "train: dataset is empty");

  TrainState state;
  std::optional<Checkpoint> resumed;
  if (opt.resume) {
    resumed = load_checkpoint(*opt.resume, opt.config_path ? std::optional(cfg.model) : std::nullopt);
    cfg.model = resumed->params.config;
  }
  cfg.validate();
  const fs::path dir = prepare_output(cfg);

  Dataset train_set = dataset;
  TrainConfig tc = cfg.train_config();
  if (opt.fold) {
    const CvConfig cv = cfg.cv_config();
    FoldData fd = prepare_fold(dataset, cv, *opt.fold, cv_folds(dataset, cv.k, cv.seed));
    train_set = std::move(fd.train);
    tc = fd.train_config;
  } else {
    if (tc.loss.variant == ClassificationVariant::BalBCE && tc.loss.class_counts.empty())
      tc.loss.class_counts = original_class_counts(dataset);
    if (cfg.data.balance)
      train_set = balance_augment(dataset, cfg.data.augment, mix_seed(cfg.protocol.seed, "balance"));
  }
  if (resumed) {
    state = TrainState{resumed->params, resumed->meta.step, resumed->meta.epoch};
    tc.seed = resumed->meta.seed;
  } else {
    state = TrainState{init_params(tc.model, tc.seed), 0, 0};
  }

  const fs::path log_path = dir / "train_log.csv";
  const bool fresh = !fs::exists(log_path) || fs::file_size(log_path) == 0;
  std::ofstream log(log_path, std::ios::app);
  require(static_cast<bool>(log), ErrorKind::Io, "cannot write '" + log_path.string() + "'");
  if (fresh) log << kTrainLogHeader << '\n' << std::flush;

  out << "training on " << train_set.size() << " instances (" << format_counts(train_set.class_counts())
      << "), " << tc.epochs << " epochs\n";
  state = train(train_set, tc, state, [&](const TrainRecord& r) {
    char line[256];
    std::snprintf(line, sizeof line, "%zu,%zu,%.10g,%.10g,%.10g,%.10g\n", r.step, r.epoch,
                  r.joint_loss, r.bce_loss, r.mse_loss, r.grad_norm);
    log << line << std::flush;
  });
  save_checkpoint(state.params, CheckpointMeta{state.step, state.epoch, tc.seed}, dir / "checkpoint");

  std::vector<std::size_t> originals;
  for (std::size_t i = 0; i < train_set.size(); ++i)
    if (!train_set[i].is_augmented) originals.push_back(i);
  const MetricsReport fit = evaluate(train_set.subset(originals), model_predictor(state.params));
  out << "steps " << state.step << ", training accuracy " << format_number(fit.accuracy) << '\n';
  out << "checkpoint written to " << (dir / "checkpoint").string() << '\n';
  return 0;
}

inline int cmd_eval(RunConfig cfg, const Options& opt, std::ostream& out) {
  const fs::path ckpt_dir = opt.checkpoint ? fs::path(*opt.checkpoint) : fs::path(cfg.output) / "checkpoint";
  Checkpoint ck = load_checkpoint(ckpt_dir, opt.config_path ? std::optional(cfg.model) : std::nullopt);
  cfg.model = ck.params.config;
  cfg.validate();

  Dataset dataset = load_dataset(cfg);
  if (opt.fold) dataset = fold_test_set(dataset, cfg, *opt.fold);
  require(!dataset.empty(), ErrorKind::Contract, "eval: dataset is empty");
  const Shape expected{cfg.model.image_size, cfg.model.image_size, cfg.model.channels};
  require(*dataset.slice_shape() == expected, ErrorKind::Dimension,
          "eval: dataset slices " + shape_string(*dataset.slice_shape()) +
              " do not match checkpoint input " + shape_string(expected));

  const fs::path dir = prepare_output(cfg);
  const MetricsReport r = evaluate(dataset, model_predictor(ck.params), opt.fold.value_or(0));
  print_report(out, r);

  Json j = report_json(r);
  j["lambda"] = cfg.loss.lambda;
  j["variant"] = to_string(cfg.loss.variant);
  j["instances"] = dataset.size();
  write_text_file(dir / "metrics.json", j.dump(2) + "\n");
  std::ostringstream csv;
  csv << kMetricsCsvHeader << '\n';
  write_metrics_row(csv, r.fold_id, cfg.loss.lambda, cfg.loss.variant, r);
  write_text_file(dir / "metrics.csv", csv.str());
  return 0;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline int cmd_ablate(const RunConfig& cfg, const Options& opt, std::ostream& out) {
  cfg.validate();
  std::vector<double> grid;
  if (opt.lambdas.empty()) grid = default_lambda_grid();
  for (const auto& s : split_list(opt.lambdas)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used == s.size(), ErrorKind::Config, "--lambdas: '" + s + "' is not a number");
    grid.push_back(v);
  }
  std::vector<ClassificationVariant> variants;
  for (const auto& s : split_list(opt.variants)) variants.push_back(parse_variant(s));

  const Dataset dataset = load_dataset(cfg);
  const fs::path dir = prepare_output(cfg);
  const auto rows = run_ablation(dataset, grid, variants, cfg.cv_config());

  std::ostringstream csv, curve;
  write_ablation_csv(csv, rows);
  write_lambda_curve_csv(curve, rows);
  write_text_file(dir / "metrics.csv", csv.str());
  write_text_file(dir / "lambda_curve.csv", curve.str());
  Json j = Json::array();
  for (const auto& row : rows) {
    Json folds = Json::array();
    for (const auto& f : row.folds) folds.push_back(report_json(f));
    j.push_back({{"lambda", row.lambda},
                 {"variant", to_string(row.variant)},
                 {"summary", summary_json(row.metrics)},
                 {"folds", folds}});
  }
  write_text_file(dir / "metrics.json", j.dump(2) + "\n");

  out << "variant  lambda  accuracy         sensitivity      specificity\n";
  for (const auto& row : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-7s  %-6g  %.4f +- %.4f  %.4f +- %.4f  %.4f +- %.4f\n",
                  std::string(to_string(row.variant)).c_str(), row.lambda,
                  row.metrics.accuracy.mean, row.metrics.accuracy.std,
                  row.metrics.sensitivity.mean, row.metrics.sensitivity.std,
                  row.metrics.specificity.mean, row.metrics.specificity.std);
    out << line;
  }
  return 0;
}

inline constexpr double kGradCheckTolerance = 1e-3;

inline int cmd_gradcheck(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  bool ok = true;
  for (double lambda : {0.0, 0.5, 1.0}) {
    const ModelGradCheck r = gradcheck_model(lambda, cfg.protocol.seed);
    char line[256];
    std::snprintf(line, sizeof line,
                  "lambda %.1f  max_rel_error %.3e  worst %s  value_head_max_grad %.3e  "
                  "class_head_max_grad %.3e\n",
                  lambda, r.max_rel_error, r.worst_tensor.c_str(), r.value_head_max_abs_grad,
                  r.class_head_max_abs_grad);
    out << line;
    if (!(r.max_rel_error < kGradCheckTolerance)) {
      err << "error[numeric]: gradient check failed at lambda " << lambda << " in tensor '"
          << r.worst_tensor << "' (relative error " << r.max_rel_error << ")\n";
      ok = false;
    }
    if (lambda == 1.0 && r.value_head_max_abs_grad != 0.0) {
      err << "error[numeric]: value head gradient is nonzero at lambda 1\n";
      ok = false;
    }
    if (lambda == 0.0 && r.class_head_max_abs_grad != 0.0) {
      err << "error[numeric]: class head gradient is nonzero at lambda 0\n";
      ok = false;
    }
  }
  return ok ? 0 : 1;
}

/// Entry point shared by the executable and the tests. Returns the process
/// exit code; failures print a single `error[<kind>]: <message>` line.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"Joint classification/regression ViT toolkit", "jointvit_cli"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  app.add_option("--config", opt.config_path, "JSON run config");
  app.add_option("--seed", opt.seed, "Seed for data synthesis and training");
  app.add_option("--out", opt.out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Write a synthetic long-tailed dataset");
  auto* train_cmd = app.add_subcommand("train", "Train and write a checkpoint");
  train_cmd->add_option("--data", opt.data, "Image folder with a labels manifest");
  train_cmd->add_option("--epochs", opt.epochs, "Epochs to train");
  train_cmd->add_option("--fold", opt.fold, "Train on the training side of this CV fold");
  train_cmd->add_option("--resume", opt.resume, "Checkpoint directory to continue from");
  train_cmd->add_option("--lambda", opt.lambda, "Joint loss coefficient");
  train_cmd->add_option("--variant", opt.variant, "Classification loss: bce or balbce");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", opt.checkpoint, "Checkpoint directory");
  eval_cmd->add_option("--data", opt.data, "Image folder with a labels manifest");
  eval_cmd->add_option("--fold", opt.fold, "Evaluate on the test side of this CV fold");
  eval_cmd->add_option("--lambda", opt.lambda, "Recorded in the metrics row");
  eval_cmd->add_option("--variant", opt.variant, "Recorded in the metrics row");
  auto* ablate = app.add_subcommand("ablate", "Cross-validated lambda / loss-variant ablation");
  ablate->add_option("--lambdas", opt.lambdas, "Comma-separated lambda grid");
  ablate->add_option("--variants", opt.variants, "Comma-separated variants (bce,balbce)");
  ablate->add_option("--data", opt.data, "Image folder with a labels manifest");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the micro model");

  std::vector<std::string> args;
  for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error[usage]: " << e.what() << '\n';
    return 2;
  }

  try {
    const RunConfig cfg = resolve_config(opt);
    if (synth->parsed()) {
      cfg.validate();
      return cmd_synth(cfg, out);
    }
    if (train_cmd->parsed()) return cmd_train(cfg, opt, out);
    if (eval_cmd->parsed()) return cmd_eval(cfg, opt, out);
    if (ablate->parsed()) return cmd_ablate(cfg, opt, out);
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, out, err);
  } catch (const Error& e) {
    err << "error[" << to_string(e.kind()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error[internal]: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace jointvit::cli
