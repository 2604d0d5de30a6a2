#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "jointvit/grad_check.hpp"
#include "jointvit/losses.hpp"
#include "jointvit/random.hpp"
#include "jointvit/vit.hpp"

namespace jointvit {

/// The micro model used for gradient checking: 8x8 images, patch 4, d=8,
/// one block, two heads.
inline ViTConfig micro_config() {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.mlp_ratio = 2;
  return c;
}

struct ModelGradCheck {
  double lambda = 0.0;
  double max_rel_error = 0.0;
  std::string worst_tensor;
  double value_head_max_abs_grad = 0.0;
  double class_head_max_abs_grad = 0.0;
};

/// Finite-difference check of the full joint-loss graph over every model
/// parameter. Parameters are drawn at unit-ish scale so that no gradient is
/// trivially tiny, and a BalBCE-free joint loss is used.
inline ModelGradCheck gradcheck_model(double lambda, std::uint64_t seed = 0,
                                      const ViTConfig& config = micro_config(),
                                      std::size_t batch = 2, double eps = 1e-5) {
  ViTParams params = init_params(config, seed);
  Rng rng(mix_seed(seed, "gradcheck.params"));
  params.visit([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v = 0.5 * standard_normal(rng);
  });

  Tensor images({batch, config.image_size, config.image_size, config.channels});
  for (double& v : images.data()) v = uniform01(rng);
  std::vector<ClassTarget> cls;
  std::vector<ValueTarget> val;
  for (std::size_t b = 0; b < batch; ++b) {
    cls.push_back(ClassTarget::of(static_cast<int>(b % config.num_classes), config.num_classes));
    val.push_back(ValueTarget{uniform(rng, 0.89, 1.0)});
  }
  JointLossConfig loss_cfg;
  loss_cfg.lambda = lambda;

  auto f = [&](Tape& tape) {
    ModelOutput out = forward(tape, params, images);
    return joint_loss(out.class_logits, out.values, cls, val, loss_cfg).total;
  };

  std::vector<Tensor*> tensors;
  std::vector<std::string> names;
  params.visit([&](const std::string& name, Tensor& t) {
    tensors.push_back(&t);
    names.push_back(name);
  });
  GradCheckReport report = grad_check(f, tensors, eps);

  ModelGradCheck out;
  out.lambda = lambda;
  out.max_rel_error = report.max_rel_error;
  out.worst_tensor = names[report.worst_param];

  Tape tape;
  GradientStore grads = tape.backward(f(tape));
  auto max_abs = [&](const Tensor& t) {
    double m = 0.0;
    if (grads.contains(t))
      for (double g : grads(t)) m = std::max(m, std::abs(g));
    return m;
  };
  out.value_head_max_abs_grad =
      std::max(max_abs(params.head_value.weight), max_abs(params.head_value.bias));
  out.class_head_max_abs_grad =
      std::max(max_abs(params.head_class.weight), max_abs(params.head_class.bias));
  return out;
}

}  // namespace jointvit
