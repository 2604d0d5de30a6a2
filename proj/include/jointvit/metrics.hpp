#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "jointvit/dataset.hpp"
#include "jointvit/error.hpp"
#include "jointvit/vit.hpp"

namespace jointvit {

/// C x C counts; rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : c_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const { return c_; }
  std::size_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * c_ + pred]; }
  std::size_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * c_ + pred]; }

  std::size_t total() const {
    std::size_t n = 0;
    for (auto v : counts_) n += v;
    return n;
  }
  std::size_t true_count(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t p = 0; p < c_; ++p) n += at(c, p);
    return n;
  }
  std::size_t predicted_count(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t t = 0; t < c_; ++t) n += at(t, c);
    return n;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t c_;
  std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const int> preds, std::span<const int> labels,
                                        std::size_t num_classes) {
  require(preds.size() == labels.size(), ErrorKind::Contract,
          "confusion_matrix: " + std::to_string(preds.size()) + " predictions for " +
              std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i] >= 0 && static_cast<std::size_t>(preds[i]) < num_classes && labels[i] >= 0 &&
                static_cast<std::size_t>(labels[i]) < num_classes,
            ErrorKind::Contract, "confusion_matrix: class index out of range at sample " +
                                     std::to_string(i));
    ++cm.at(static_cast<std::size_t>(labels[i]), static_cast<std::size_t>(preds[i]));
  }
  return cm;
}

inline double accuracy(const ConfusionMatrix& cm) {
  const std::size_t n = cm.total();
  require(n > 0, ErrorKind::Contract, "accuracy: empty confusion matrix");
  std::size_t hits = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) hits += cm.at(c, c);
  return static_cast<double>(hits) / static_cast<double>(n);
}

/// TP / (TP + FN) for class c.
inline double class_recall(const ConfusionMatrix& cm, std::size_t c) {
  const std::size_t positives = cm.true_count(c);
  require(positives > 0, ErrorKind::Contract,
          "sensitivity undefined: class " + std::to_string(c) + " has no true instances");
  return static_cast<double>(cm.at(c, c)) / static_cast<double>(positives);
}

/// TN / (TN + FP) for class c, one-vs-rest.
inline double class_specificity(const ConfusionMatrix& cm, std::size_t c) {
  const std::size_t negatives = cm.total() - cm.true_count(c);
  require(negatives > 0, ErrorKind::Contract,
          "specificity undefined: class " + std::to_string(c) + " has no true negatives");
  const std::size_t fp = cm.predicted_count(c) - cm.at(c, c);
  return static_cast<double>(negatives - fp) / static_cast<double>(negatives);
}

inline double macro_sensitivity(const ConfusionMatrix& cm) {
  double s = 0.0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) s += class_recall(cm, c);
  return s / static_cast<double>(cm.num_classes());
}

inline double macro_specificity(const ConfusionMatrix& cm) {
  double s = 0.0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) s += class_specificity(cm, c);
  return s / static_cast<double>(cm.num_classes());
}

struct MetricsReport {
  double accuracy = 0.0;
  double macro_sensitivity = 0.0;
  double macro_specificity = 0.0;
  std::vector<double> per_class_recall;
  std::vector<double> per_class_specificity;
  std::size_t fold_id = 0;
  ConfusionMatrix confusion{0};
};

inline MetricsReport make_report(const ConfusionMatrix& cm, std::size_t fold_id = 0) {
  MetricsReport r;
  r.accuracy = accuracy(cm);
  r.macro_sensitivity = macro_sensitivity(cm);
  r.macro_specificity = macro_specificity(cm);
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    r.per_class_recall.push_back(class_recall(cm, c));
    r.per_class_specificity.push_back(class_specificity(cm, c));
  }
  r.fold_id = fold_id;
  r.confusion = cm;
  return r;
}

using Predictor = std::function<int(const LabeledInstance&)>;

inline Predictor model_predictor(const ViTParams& params) {
  return [&params](const LabeledInstance& inst) { return predict_instance(params, inst).class_index; };
}

/// Instance-level evaluation of `predict` on every instance of `dataset`.
inline MetricsReport evaluate(const Dataset& dataset, const Predictor& predict,
                              std::size_t fold_id = 0) {
  require(!dataset.empty(), ErrorKind::Contract, "evaluate: empty dataset");
  std::vector<int> preds, labels;
  for (const auto& inst : dataset.instances()) {
    preds.push_back(predict(inst));
    labels.push_back(inst.label());
  }
  return make_report(confusion_matrix(preds, labels, kNumSaO2Classes), fold_id);
}

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population convention (divide by k)
};

inline MetricSummary summarize(std::span<const double> values) {
  require(!values.empty(), ErrorKind::Contract, "summarize: no values");
  MetricSummary s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(var / static_cast<double>(values.size()));
  return s;
}

struct AggregateMetrics {
  MetricSummary accuracy;
  MetricSummary sensitivity;
  MetricSummary specificity;
};

inline AggregateMetrics aggregate(std::span<const MetricsReport> reports) {
  std::vector<double> acc, sens, spec;
  for (const auto& r : reports) {
    acc.push_back(r.accuracy);
    sens.push_back(r.macro_sensitivity);
    spec.push_back(r.macro_specificity);
  }
  return AggregateMetrics{summarize(acc), summarize(sens), summarize(spec)};
}

}  // namespace jointvit
