#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "jointvit/augment.hpp"
#include "jointvit/dataset.hpp"
#include "jointvit/metrics.hpp"
#include "jointvit/random.hpp"
#include "jointvit/train.hpp"

namespace jointvit {

/// Shuffles indices 0..n-1 by `seed` and deals them into k folds. When
/// labels are given and every class present has at least k members, each
/// class is shuffled separately and dealt in turn (stratified); otherwise the
/// split is unstratified. Fold sizes differ by at most one either way.
inline std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k,
                                                           std::uint64_t seed,
                                                           std::span<const int> labels = {}) {
  require(k >= 1 && n >= k, ErrorKind::Contract,
          "kfold_split: need at least k=" + std::to_string(k) + " items, got " + std::to_string(n));
  require(labels.empty() || labels.size() == n, ErrorKind::Contract,
          "kfold_split: labels length does not match ids");
  Rng rng(mix_seed(seed, "kfold"));

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  bool stratify = !labels.empty();
  for (const auto& [_, members] : by_class) stratify = stratify && members.size() >= k;

  std::vector<std::size_t> dealt;
  if (stratify) {
    for (auto& [_, members] : by_class) {
      shuffle(members, rng);
      dealt.insert(dealt.end(), members.begin(), members.end());
    }
  } else {
    dealt.resize(n);
    for (std::size_t i = 0; i < n; ++i) dealt[i] = i;
    shuffle(dealt, rng);
  }
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < dealt.size(); ++i) folds[i % k].push_back(dealt[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

/// Same split expressed as instance ids.
inline std::vector<std::vector<std::string>> kfold_split(std::span<const std::string> ids,
                                                         std::size_t k, std::uint64_t seed,
                                                         std::span<const int> labels = {}) {
  std::vector<std::vector<std::string>> out;
  for (const auto& fold : kfold_indices(ids.size(), k, seed, labels)) {
    auto& f = out.emplace_back();
    for (std::size_t i : fold) f.push_back(ids[i]);
  }
  return out;
}

struct CvConfig {
  TrainConfig train;
  bool balance = true;
  AugmentPolicy augment;
  std::size_t k = 3;
  std::uint64_t seed = 0;
};

/// Training seed for fold `f`; the same derivation is used by run_cv and by
/// the CLI's single-fold train/eval so their results coincide.
inline std::uint64_t fold_train_seed(std::uint64_t seed, std::size_t fold) {
  return mix_seed(mix_seed(seed, "fold.train"), fold);
}

inline std::uint64_t fold_balance_seed(std::uint64_t seed, std::size_t fold) {
  return mix_seed(mix_seed(seed, "fold.balance"), fold);
}

struct FoldData {
  Dataset train;  // after balancing, when enabled
  Dataset test;
  TrainConfig train_config;
};

/// Test ids per fold, computed over the non-augmented instances only.
inline std::vector<std::vector<std::string>> cv_folds(const Dataset& dataset, std::size_t k,
                                                      std::uint64_t seed) {
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (const auto& inst : dataset.instances()) {
    if (inst.is_augmented) continue;
    ids.push_back(inst.instance_id);
    labels.push_back(inst.label());
  }
  return kfold_split(ids, k, seed, labels);
}

/// Builds the train/test split for one fold. The test side holds only
/// originals of that fold; the train side holds every other instance whose
/// source is not a test instance, balanced afterwards when enabled.
inline FoldData prepare_fold(const Dataset& dataset, const CvConfig& cfg, std::size_t fold,
                             const std::vector<std::vector<std::string>>& folds) {
  require(fold < folds.size(), ErrorKind::Contract, "fold index out of range");
  const std::set<std::string> test_ids(folds[fold].begin(), folds[fold].end());
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& inst = dataset[i];
    if (test_ids.contains(inst.instance_id)) test_idx.push_back(i);
    else if (!test_ids.contains(inst.source_id)) train_idx.push_back(i);
  }
  Dataset train_set = dataset.subset(train_idx);
  TrainConfig tc = cfg.train;
  tc.seed = fold_train_seed(cfg.seed, fold);
  if (tc.loss.variant == ClassificationVariant::BalBCE && tc.loss.class_counts.empty())
    tc.loss.class_counts = original_class_counts(train_set);
  if (cfg.balance) {
    try {
      train_set = balance_augment(train_set, cfg.augment, fold_balance_seed(cfg.seed, fold));
    } catch (const Error& e) {
      fail(e.kind(), "fold " + std::to_string(fold) + ": " + e.what());
    }
  }
  return FoldData{std::move(train_set), dataset.subset(test_idx), std::move(tc)};
}

struct FoldRecord {
  std::vector<std::string> test_ids;
  std::vector<std::string> train_ids;
  std::size_t train_augmented = 0;
  MetricsReport report;
};

struct CvResult {
  std::vector<FoldRecord> folds;
  AggregateMetrics aggregate;

  std::vector<MetricsReport> reports() const {
    std::vector<MetricsReport> out;
    for (const auto& f : folds) out.push_back(f.report);
    return out;
  }
};

/// Leakage checks for one fold: the test side has no augmented instances and
/// shares no source with anything on the training side.
inline void check_fold_hygiene(const Dataset& train, const Dataset& test, std::size_t fold) {
  std::set<std::string> train_sources;
  for (const auto& inst : train.instances()) train_sources.insert(inst.source_id);
  for (const auto& inst : test.instances()) {
    require(!inst.is_augmented, ErrorKind::Contract,
            "fold " + std::to_string(fold) + ": augmented instance '" + inst.instance_id +
                "' in test fold");
    require(!train_sources.contains(inst.source_id), ErrorKind::Contract,
            "fold " + std::to_string(fold) + ": test instance '" + inst.instance_id +
                "' shares its source with training data");
  }
}

/// k-fold cross-validation: per fold, balance the training side only, train,
/// and evaluate at instance level on the untouched test fold.
inline CvResult run_cv(const Dataset& dataset, const CvConfig& cfg) {
  const auto folds = cv_folds(dataset, cfg.k, cfg.seed);
  CvResult result;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldData data = prepare_fold(dataset, cfg, f, folds);
    check_fold_hygiene(data.train, data.test, f);
    FoldRecord rec;
    for (const auto& inst : data.test.instances()) rec.test_ids.push_back(inst.instance_id);
    for (const auto& inst : data.train.instances()) {
      rec.train_ids.push_back(inst.instance_id);
      rec.train_augmented += inst.is_augmented ? 1 : 0;
    }
    try {
      TrainState state = train(data.train, data.train_config);
      rec.report = evaluate(data.test, model_predictor(state.params), f);
    } catch (const Error& e) {
      fail(e.kind(), "fold " + std::to_string(f) + ": " + e.what());
    }
    result.folds.push_back(std::move(rec));
  }
  result.aggregate = aggregate(result.reports());
  return result;
}

/// Default lambda grid for ablations.
inline std::vector<double> default_lambda_grid() {
  return {0.8, 0.9, 0.95, 0.96, 0.97, 0.98, 0.99, 1.0};
}

struct AblationResult {
  double lambda = 0.0;
  ClassificationVariant variant = ClassificationVariant::BCE;
  AggregateMetrics metrics;
  std::vector<MetricsReport> folds;
  std::vector<std::vector<std::string>> fold_test_ids;
};

/// Full cross-validation for every (variant, lambda) cell with identical
/// folds and seeds, rows ordered by variant then grid order.
inline std::vector<AblationResult> run_ablation(const Dataset& dataset,
                                                std::span<const double> lambda_grid,
                                                std::span<const ClassificationVariant> variants,
                                                const CvConfig& base) {
  require(!lambda_grid.empty(), ErrorKind::Config, "run_ablation: empty lambda grid");
  require(!variants.empty(), ErrorKind::Config, "run_ablation: no loss variants");
  std::vector<AblationResult> rows;
  for (ClassificationVariant variant : variants) {
    for (double lambda : lambda_grid) {
      CvConfig cfg = base;
      cfg.train.loss.lambda = lambda;
      cfg.train.loss.variant = variant;
      cfg.train.loss.class_counts.clear();  // recomputed per fold
      require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Config,
              "lambda must lie in [0, 1], got " + std::to_string(lambda));
      CvResult cv = run_cv(dataset, cfg);
      AblationResult row{lambda, variant, cv.aggregate, cv.reports(), {}};
      for (const auto& f : cv.folds) row.fold_test_ids.push_back(f.test_ids);
      require(rows.empty() || rows.front().fold_test_ids == row.fold_test_ids,
              ErrorKind::Contract, "run_ablation: fold assignments differ between cells");
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

inline constexpr const char* kMetricsCsvHeader = "fold,lambda,variant,accuracy,sensitivity,specificity";

inline std::string format_number(double v, const char* fmt = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline void write_metrics_row(std::ostream& out, std::size_t fold, double lambda,
                              ClassificationVariant variant, const MetricsReport& r) {
  out << fold << ',' << format_number(lambda, "%.10g") << ',' << to_string(variant) << ','
      << format_number(r.accuracy) << ',' << format_number(r.macro_sensitivity) << ','
      << format_number(r.macro_specificity) << '\n';
}

/// One row per (cell, fold).
inline void write_ablation_csv(std::ostream& out, std::span<const AblationResult> rows) {
  out << kMetricsCsvHeader << '\n';
  for (const auto& row : rows)
    for (const auto& r : row.folds) write_metrics_row(out, r.fold_id, row.lambda, row.variant, r);
}

/// Long-format table for plotting metric-vs-lambda curves.
inline void write_lambda_curve_csv(std::ostream& out, std::span<const AblationResult> rows) {
  out << "lambda,variant,metric,mean,std\n";
  for (const auto& row : rows) {
    const std::pair<const char*, const MetricSummary*> metrics[] = {
        {"accuracy", &row.metrics.accuracy},
        {"sensitivity", &row.metrics.sensitivity},
        {"specificity", &row.metrics.specificity}};
    for (const auto& [name, s] : metrics) {
      out << format_number(row.lambda, "%.10g") << ',' << to_string(row.variant) << ',' << name
          << ',' << format_number(s->mean) << ',' << format_number(s->std) << '\n';
    }
  }
}

}  // namespace jointvit
