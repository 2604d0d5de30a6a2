#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "jointvit/autodiff.hpp"
#include "jointvit/dataset.hpp"
#include "jointvit/losses.hpp"
#include "jointvit/random.hpp"
#include "jointvit/vit.hpp"

namespace jointvit {

/// AdamW hyperparameters. Weight decay is decoupled and applies to matrices
/// only (biases, norms and the cls token are not decayed).
struct OptimizerConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // global L2 norm; <= 0 disables clipping

  void validate() const {
    require(lr > 0.0, ErrorKind::Config, "optimizer lr must be positive");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, ErrorKind::Config,
            "optimizer betas must lie in [0, 1)");
    require(eps > 0.0, ErrorKind::Config, "optimizer eps must be positive");
    require(weight_decay >= 0.0, ErrorKind::Config, "weight decay must be non-negative");
  }
};

class AdamW {
 public:
  AdamW(OptimizerConfig cfg, const ViTParams& params) : cfg_(cfg) {
    cfg_.validate();
    params.visit([&](const std::string&, const Tensor& t) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    });
  }

  /// Clips gradients to the configured global norm and applies one update.
  /// Returns the gradient norm before clipping.
  double step(ViTParams& params, const GradientStore& grads) {
    const double norm = grads.global_norm();
    const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t idx = 0;
    params.visit([&](const std::string&, Tensor& p) {
      auto& m = m_[idx];
      auto& v = v_[idx];
      ++idx;
      if (!grads.contains(p)) return;
      auto g = grads(p);
      auto w = p.data();
      const double decay = p.rank() >= 2 ? cfg_.lr * cfg_.weight_decay : 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        w[i] -= decay * w[i];
        w[i] -= cfg_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    });
    return norm;
  }

  std::size_t steps() const { return t_; }

 private:
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  ViTConfig model;
  JointLossConfig loss;
  OptimizerConfig optimizer;
  std::size_t epochs = 40;
  std::size_t batch_size = 16;
  std::size_t max_steps = 0;  // 0 = no cap
  std::uint64_t seed = 0;
};

struct TrainRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double joint_loss = 0.0;
  double bce_loss = 0.0;
  double mse_loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainState {
  ViTParams params;
  std::size_t step = 0;
  std::size_t epoch = 0;
};

using TrainObserver = std::function<void(const TrainRecord&)>;

/// Per-class counts of non-augmented instances, as used for the BalBCE prior.
inline std::vector<double> original_class_counts(const Dataset& dataset) {
  std::vector<double> counts(kNumSaO2Classes, 0.0);
  for (const auto& inst : dataset.instances())
    if (!inst.is_augmented) counts[static_cast<std::size_t>(inst.label())] += 1.0;
  return counts;
}

/// Trains on every slice of every instance for `cfg.epochs` further epochs,
/// starting from `state`. Batches are drawn from a per-epoch shuffle.
inline TrainState train(const Dataset& dataset, const TrainConfig& cfg, TrainState state,
                        const TrainObserver& observe = {}) {
  cfg.model.validate();
  require(state.params.config == cfg.model, ErrorKind::Config,
          "train: initial parameters were built for a different model config");
  require(cfg.model.num_classes == kNumSaO2Classes, ErrorKind::Config,
          "train: model must have " + std::to_string(kNumSaO2Classes) + " classes");
  require(cfg.batch_size > 0, ErrorKind::Config, "train: batch_size must be positive");
  if (cfg.epochs == 0) return state;
  require(!dataset.empty(), ErrorKind::Contract, "train: empty dataset");
  const Shape expected{cfg.model.image_size, cfg.model.image_size, cfg.model.channels};
  require(*dataset.slice_shape() == expected, ErrorKind::Dimension,
          "train: dataset slices " + shape_string(*dataset.slice_shape()) +
              " do not match model input " + shape_string(expected));

  JointLossConfig loss_cfg = cfg.loss;
  if (loss_cfg.variant == ClassificationVariant::BalBCE && loss_cfg.class_counts.empty())
    loss_cfg.class_counts = original_class_counts(dataset);
  loss_cfg.validate();

  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    for (std::size_t s = 0; s < dataset[i].slices.size(); ++s) samples.emplace_back(i, s);

  AdamW optimizer(cfg.optimizer, state.params);
  const std::size_t end_epoch = state.epoch + cfg.epochs;
  for (; state.epoch < end_epoch; ++state.epoch) {
    Rng order_rng = stream_rng(mix_seed(cfg.seed, "epoch"), state.epoch);
    auto order = samples;
    shuffle(order, order_rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps && state.step >= cfg.max_steps) return state;
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Tensor*> images;
      std::vector<ClassTarget> cls;
      std::vector<ValueTarget> val;
      for (std::size_t i = start; i < stop; ++i) {
        const LabeledInstance& inst = dataset[order[i].first];
        images.push_back(&inst.slices[order[i].second]);
        cls.push_back(ClassTarget::of(inst.label(), cfg.model.num_classes));
        val.push_back(ValueTarget::from_percent(inst.sao2_percent));
      }
      Rng dropout_rng = stream_rng(mix_seed(cfg.seed, "dropout"), state.step);
      Tape tape;
      ModelOutput out = forward(tape, state.params, stack_images(images), true, &dropout_rng);
      JointLoss loss = joint_loss(out.class_logits, out.values, cls, val, loss_cfg);
      GradientStore grads = tape.backward(loss.total);

      TrainRecord rec{state.step + 1, state.epoch, loss.total.value().item(),
                      loss.classification.value().item(), loss.regression.value().item(),
                      grads.global_norm()};
      if (!std::isfinite(rec.joint_loss) || !std::isfinite(rec.grad_norm)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << rec.step << " (lr=" << cfg.optimizer.lr
            << ", grad_norm=" << rec.grad_norm << ", joint_loss=" << rec.joint_loss << ")";
        fail(ErrorKind::Numeric, msg.str());
      }
      optimizer.step(state.params, grads);
      ++state.step;
      if (observe) observe(rec);
    }
  }
  return state;
}

inline TrainState train(const Dataset& dataset, const TrainConfig& cfg,
                        const TrainObserver& observe = {}) {
  return train(dataset, cfg, TrainState{init_params(cfg.model, cfg.seed), 0, 0}, observe);
}

}  // namespace jointvit
