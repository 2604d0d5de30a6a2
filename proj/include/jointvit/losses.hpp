#pragma once

#include <cmath>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jointvit/autodiff.hpp"
#include "jointvit/error.hpp"

namespace jointvit {

enum class ClassificationVariant { BCE, BalBCE };

inline std::string_view to_string(ClassificationVariant v) {
  return v == ClassificationVariant::BCE ? "bce" : "balbce";
}

inline ClassificationVariant parse_variant(std::string_view name) {
  if (name == "bce" || name == "BCE") return ClassificationVariant::BCE;
  if (name == "balbce" || name == "BalBCE" || name == "bal-bce") return ClassificationVariant::BalBCE;
  fail(ErrorKind::Config, "unknown loss variant '" + std::string(name) + "'");
}

struct JointLossConfig {
  double lambda = 0.99;
  ClassificationVariant variant = ClassificationVariant::BCE;
  std::vector<double> class_counts;  // required for BalBCE

  void validate() const {
    require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::Config,
            "lambda must lie in [0, 1], got " + std::to_string(lambda));
    if (variant == ClassificationVariant::BalBCE) {
      require(!class_counts.empty(), ErrorKind::Config, "BalBCE requires class counts");
      for (double c : class_counts)
        require(c > 0.0, ErrorKind::Config, "BalBCE requires strictly positive class counts");
    }
  }
};

struct ClassTarget {
  std::vector<double> one_hot;

  static ClassTarget of(int class_index, std::size_t num_classes) {
    require(class_index >= 0 && static_cast<std::size_t>(class_index) < num_classes,
            ErrorKind::Contract, "class index out of range");
    ClassTarget t{std::vector<double>(num_classes, 0.0)};
    t.one_hot[static_cast<std::size_t>(class_index)] = 1.0;
    return t;
  }

  void validate() const {
    double s = 0.0;
    for (double v : one_hot) {
      require(v == 0.0 || v == 1.0, ErrorKind::Contract, "one-hot entries must be 0 or 1");
      s += v;
    }
    require(s == 1.0, ErrorKind::Contract, "one-hot target must contain exactly one 1");
  }
};

struct ValueTarget {
  double sao2_fraction = 1.0;

  static ValueTarget from_percent(double percent) { return ValueTarget{percent / 100.0}; }

  void validate() const {
    require(sao2_fraction > 0.0 && sao2_fraction <= 1.0, ErrorKind::Contract,
            "SaO2 fraction must lie in (0, 1], got " + std::to_string(sao2_fraction));
  }
};

namespace detail {

inline Tensor targets_matrix(const Tensor& logits, std::span<const ClassTarget> targets) {
  require(logits.rank() == 2 && logits.dim(0) == targets.size(), ErrorKind::Dimension,
          "class loss: logits " + shape_string(logits.shape()) + " vs " +
              std::to_string(targets.size()) + " targets");
  const std::size_t C = logits.dim(1);
  Tensor y({targets.size(), C});
  for (std::size_t b = 0; b < targets.size(); ++b) {
    targets[b].validate();
    require(targets[b].one_hot.size() == C, ErrorKind::Dimension,
            "class loss: target width " + std::to_string(targets[b].one_hot.size()) +
                " vs " + std::to_string(C) + " logits");
    for (std::size_t c = 0; c < C; ++c) y[b * C + c] = targets[b].one_hot[c];
  }
  return y;
}

}  // namespace detail

/// Mean over B*C entries of per-class sigmoid binary cross-entropy.
inline Var bce_loss(Var class_logits, std::span<const ClassTarget> targets) {
  return sigmoid_bce_mean(class_logits, detail::targets_matrix(class_logits.value(), targets));
}

inline Var mse_loss(Var value_pred, std::span<const ValueTarget> targets) {
  const Tensor& p = value_pred.value();
  require(p.rank() == 1 && p.dim(0) == targets.size(), ErrorKind::Dimension,
          "mse_loss: prediction " + shape_string(p.shape()) + " vs " +
              std::to_string(targets.size()) + " targets");
  Tensor t({targets.size()});
  for (std::size_t i = 0; i < targets.size(); ++i) t[i] = targets[i].sao2_fraction;
  return squared_error_mean(value_pred, t);
}

/// Per-class logit shift log(pi_j) - log(1 - pi_j), pi_j = n_j / sum(n).
inline std::vector<double> balanced_logit_adjustment(std::span<const double> class_counts) {
  double total = 0.0;
  for (double c : class_counts) {
    require(c > 0.0, ErrorKind::Config, "BalBCE requires strictly positive class counts");
    total += c;
  }
  std::vector<double> adj;
  adj.reserve(class_counts.size());
  for (double c : class_counts) {
    const double pi = c / total;
    adj.push_back(std::log(pi) - std::log(1.0 - pi));
  }
  return adj;
}

/// Balanced BCE: BCE on logits shifted by the class-prior log-odds.
inline Var bal_bce_loss(Var class_logits, std::span<const ClassTarget> targets,
                        std::span<const double> class_counts) {
  const Tensor& z = class_logits.value();
  require(z.rank() == 2 && z.dim(1) == class_counts.size(), ErrorKind::Dimension,
          "bal_bce_loss: " + std::to_string(class_counts.size()) + " class counts for logits " +
              shape_string(z.shape()));
  auto adj = balanced_logit_adjustment(class_counts);
  const std::size_t c = adj.size();
  Var shift = class_logits.tape->constant(Tensor({c}, std::move(adj)));
  return bce_loss(add_bias(class_logits, shift), targets);
}

struct JointLoss {
  Var total;
  Var classification;
  Var regression;
};

/// L = lambda * L_cls + (1 - lambda) * L_mse.
inline JointLoss joint_loss(Var class_logits, Var value_pred,
                            std::span<const ClassTarget> cls_targets,
                            std::span<const ValueTarget> val_targets,
                            const JointLossConfig& cfg) {
  cfg.validate();
  Var cls = cfg.variant == ClassificationVariant::BCE
                ? bce_loss(class_logits, cls_targets)
                : bal_bce_loss(class_logits, cls_targets, cfg.class_counts);
  Var reg = mse_loss(value_pred, val_targets);
  Var total = add(scale(cls, cfg.lambda), scale(reg, 1.0 - cfg.lambda));
  return JointLoss{total, cls, reg};
}

}  // namespace jointvit
