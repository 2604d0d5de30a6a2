#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"

using namespace jointvit;
using jointvit::testing::random_tensor;

namespace {

Tensor random_batch(const ViTConfig& c, std::size_t b, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({b, c.image_size, c.image_size, c.channels});
  for (double& v : t.data()) v = uniform01(rng);
  return t;
}

ViTConfig small_config() {
  ViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 16;
  c.depth = 2;
  c.heads = 2;
  return c;
}

}  // namespace

TEST(ViTConfig, DefaultsMatchDocumentation) {
  ViTConfig c;
  EXPECT_EQ(c.image_size, 64u);
  EXPECT_EQ(c.patch_size, 16u);
  EXPECT_EQ(c.channels, 1u);
  EXPECT_EQ(c.embed_dim, 64u);
  EXPECT_EQ(c.depth, 4u);
  EXPECT_EQ(c.heads, 4u);
  EXPECT_EQ(c.mlp_ratio, 4u);
  EXPECT_EQ(c.num_classes, 3u);
  EXPECT_EQ(c.dropout, 0.0);
  EXPECT_EQ(c.num_patches(), 16u);
}

TEST(ViTConfig, ViolationsAreListed) {
  ViTConfig c;
  c.embed_dim = 65;
  try {
    init_params(c, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
    EXPECT_NE(std::string(e.what()).find("divisible by heads"), std::string::npos);
  }
  c.image_size = 60;
  c.num_classes = 1;
  EXPECT_EQ(c.violations().size(), 3u);
}

TEST(InitParams, ParameterCountMatchesIndependentEnumeration) {
  // Counts from tests/oracles/reference_values.py.
  ViTParams p = init_params(ViTConfig{}, 0);
  EXPECT_EQ(p.parameter_count(), 217924u);
  EXPECT_EQ(ViTConfig{}.parameter_count(), 217924u);
  EXPECT_EQ(p.tensors().size(), 74u);

  ViTConfig micro;
  micro.image_size = 8;
  micro.patch_size = 4;
  micro.embed_dim = 8;
  micro.depth = 1;
  EXPECT_EQ(init_params(micro, 0).parameter_count(), 1108u);
  EXPECT_EQ(micro.parameter_count(), 1108u);
  EXPECT_EQ(init_params(micro, 0).tensors().size(), 26u);
}

TEST(InitParams, ClosedFormHoldsAcrossConfigs) {
  for (std::size_t depth : {1u, 2u, 3u})
    for (std::size_t d : {4u, 8u, 12u})
      for (std::size_t ratio : {1u, 2u, 4u}) {
        ViTConfig c;
        c.image_size = 8;
        c.patch_size = 2;
        c.embed_dim = d;
        c.heads = 2;
        c.depth = depth;
        c.mlp_ratio = ratio;
        c.channels = depth;  // vary the patch width too
        EXPECT_EQ(init_params(c, 1).parameter_count(), c.parameter_count());
      }
}

TEST(InitParams, DeterministicAndSeedSensitive) {
  ViTConfig c = small_config();
  EXPECT_TRUE(init_params(c, 5) == init_params(c, 5));
  EXPECT_FALSE(init_params(c, 5) == init_params(c, 6));
}

TEST(InitParams, DistributionFollowsConvention) {
  ViTParams p = init_params(ViTConfig{}, 3);
  EXPECT_TRUE(p.all_finite());
  p.visit([](const std::string& name, const Tensor& t) {
    const bool is_norm_weight = name.find("norm") != std::string::npos && name.ends_with(".weight");
    if (name.ends_with(".bias")) {
      for (double v : t.data()) EXPECT_EQ(v, 0.0) << name;
    } else if (is_norm_weight) {
      for (double v : t.data()) EXPECT_EQ(v, 1.0) << name;
    } else {
      double sq = 0.0;
      for (double v : t.data()) {
        EXPECT_LE(std::abs(v), 0.04) << name;  // truncated at two sigma
        sq += v * v;
      }
      if (t.size() > 500) {
        EXPECT_NEAR(std::sqrt(sq / t.size()), 0.0176, 0.002) << name;
      }
    }
  });
}

TEST(InitParams, CanonicalNames) {
  std::vector<std::string> names;
  init_params(small_config(), 0).visit([&](const std::string& n, const Tensor&) { names.push_back(n); });
  EXPECT_EQ(names.front(), "patch_embed.weight");
  EXPECT_EQ(names[4], "block.0.norm1.weight");
  EXPECT_EQ(names[6], "block.0.attn.q.weight");
  EXPECT_EQ(names.back(), "head_value.bias");
  EXPECT_EQ(std::set<std::string>(names.begin(), names.end()).size(), names.size());
}

TEST(Patchify, ShapeAndConstantImage) {
  Tensor img({32, 32, 1}, 0.25);
  Tensor p = patchify(img, 16);
  EXPECT_EQ(p.shape(), (Shape{4, 256}));
  for (double v : p.data()) EXPECT_EQ(v, 0.25);
}

TEST(Patchify, FlatteningOrderIsRowColumnChannel) {
  Tensor img({4, 4, 2});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i);
  Tensor p = patchify(img, 2);
  // Patch 1 is the top-right 2x2 block; its first entries are (0,2,c0), (0,2,c1), (0,3,c0).
  EXPECT_EQ(p.at(1, 0), img[(0 * 4 + 2) * 2 + 0]);
  EXPECT_EQ(p.at(1, 1), img[(0 * 4 + 2) * 2 + 1]);
  EXPECT_EQ(p.at(1, 2), img[(0 * 4 + 3) * 2 + 0]);
  EXPECT_EQ(p.at(2, 4), img[(3 * 4 + 0) * 2 + 0]);
}

TEST(Patchify, RoundTripIsExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor img = random_tensor({12, 8, 3}, seed);
    EXPECT_TRUE(bitwise_equal(unpatchify(patchify(img, 4), 12, 8, 3, 4), img));
  }
}

TEST(Patchify, IndivisibleIsDimensionError) {
  try {
    patchify(Tensor({30, 32, 1}), 16);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
  }
}

TEST(Forward, OutputShapes) {
  ViTParams p = init_params(ViTConfig{}, 0);
  Tape tape;
  ModelOutput out = forward(tape, p, random_batch(p.config, 2, 1));
  EXPECT_EQ(out.class_logits.shape(), (Shape{2, 3}));
  EXPECT_EQ(out.values.shape(), (Shape{2}));
  for (double v : out.class_logits.value().data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Forward, BatchShapeMismatchIsDimensionError) {
  ViTParams p = init_params(small_config(), 0);
  Tape tape;
  try {
    forward(tape, p, Tensor({1, 8, 8, 1}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Dimension);
  }
}

TEST(Forward, PermutingTheBatchPermutesOutputs) {
  ViTParams p = init_params(small_config(), 2);
  Rng rng(9);
  p.visit([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v += 0.3 * standard_normal(rng);
  });
  const std::size_t per = 16 * 16;
  Tensor batch = random_batch(p.config, 3, 4);
  const std::size_t perm[] = {2, 0, 1};
  Tensor permuted(batch.shape());
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t i = 0; i < per; ++i) permuted[b * per + i] = batch[perm[b] * per + i];
  Tape t1, t2;
  ModelOutput a = forward(t1, p, batch), b = forward(t2, p, permuted);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 3; ++c)
      EXPECT_EQ(b.class_logits.value().at(i, c), a.class_logits.value().at(perm[i], c));
    EXPECT_EQ(b.values.value()[i], a.values.value()[perm[i]]);
  }
}

TEST(Forward, ZeroHeadWeightsYieldBiases) {
  ViTParams p = init_params(small_config(), 0);
  for (double& v : p.head_class.weight.data()) v = 0.0;
  for (double& v : p.head_value.weight.data()) v = 0.0;
  p.head_class.bias = Tensor({3}, std::vector<double>{0.5, -0.25, 2.0});
  p.head_value.bias = Tensor({1}, std::vector<double>{0.97});
  Tape tape;
  ModelOutput out = forward(tape, p, random_batch(p.config, 2, 3));
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.class_logits.value().at(b, c), p.head_class.bias[c]);
    EXPECT_EQ(out.values.value()[b], 0.97);
  }
}

TEST(Forward, DeterministicAcrossRuns) {
  ViTParams p = init_params(small_config(), 0);
  Tensor batch = random_batch(p.config, 2, 5);
  Tape t1, t2;
  EXPECT_TRUE(bitwise_equal(forward(t1, p, batch).class_logits.value(),
                            forward(t2, p, batch).class_logits.value()));
}

TEST(Forward, DropoutOnlyInTrainMode) {
  ViTConfig c = small_config();
  c.dropout = 0.5;
  ViTParams p = init_params(c, 0);
  Tensor batch = random_batch(c, 2, 6);
  Tape t1, t2, t3;
  Rng rng(1);
  const Tensor eval_a = forward(t1, p, batch).class_logits.value();
  const Tensor eval_b = forward(t2, p, batch, false).class_logits.value();
  EXPECT_TRUE(bitwise_equal(eval_a, eval_b));
  EXPECT_FALSE(bitwise_equal(forward(t3, p, batch, true, &rng).class_logits.value(), eval_a));
  Tape t4;
  EXPECT_THROW(forward(t4, p, batch, true, nullptr), Error);
}

TEST(Forward, GradientFlowToHeadsFollowsLambda) {
  ViTParams p = init_params(small_config(), 7);
  Tensor batch = random_batch(p.config, 2, 8);
  std::vector<ClassTarget> cls{ClassTarget::of(0, 3), ClassTarget::of(2, 3)};
  std::vector<ValueTarget> val{ValueTarget{0.91}, ValueTarget{0.97}};
  auto head_grads = [&](double lambda) {
    JointLossConfig cfg;
    cfg.lambda = lambda;
    Tape tape;
    ModelOutput out = forward(tape, p, batch);
    GradientStore g = tape.backward(joint_loss(out.class_logits, out.values, cls, val, cfg).total);
    return std::pair{g.max_abs(p.head_class.weight), g.max_abs(p.head_value.weight)};
  };
  auto [c_mid, v_mid] = head_grads(0.5);
  EXPECT_GT(c_mid, 0.0);
  EXPECT_GT(v_mid, 0.0);
  EXPECT_EQ(head_grads(1.0).second, 0.0);
  EXPECT_EQ(head_grads(0.0).first, 0.0);
}

TEST(ModelGradCheck, MicroModelPassesAtAllLambdas) {
  for (double lambda : {0.0, 0.5, 1.0}) {
    ModelGradCheck r = gradcheck_model(lambda);
    EXPECT_LT(r.max_rel_error, 1e-3) << "lambda " << lambda << " worst " << r.worst_tensor;
  }
}

TEST(PredictClass, ArgmaxWithLowestIndexTieBreak) {
  EXPECT_EQ(predict_class(Tensor({1, 3}, std::vector<double>{0.1, 2.0, -1.0})), std::vector<int>{1});
  EXPECT_EQ(predict_class(Tensor({1, 3}, std::vector<double>{5, 5, 5})), std::vector<int>{0});
  // Mean of [2,0,0] and [0,2,0] ties classes 0 and 1.
  EXPECT_EQ(predict_class(Tensor({1, 3}, std::vector<double>{1, 1, 0})), std::vector<int>{0});
}

TEST(PredictClass, ShiftInvariant) {
  Tensor logits = random_tensor({20, 3}, 11);
  Tensor shifted = logits;
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 3; ++c) shifted.at(r, c) += 0.5 * static_cast<double>(r) - 3.0;
  EXPECT_EQ(predict_class(logits), predict_class(shifted));
}

TEST(PredictInstance, SingleAndDuplicatedSlices) {
  ViTParams p = init_params(small_config(), 12);
  Rng rng(3);
  p.visit([&](const std::string&, Tensor& t) {
    for (double& v : t.data()) v += 0.3 * standard_normal(rng);
  });
  Tensor batch = random_batch(p.config, 1, 13);
  Tensor slice = batch.reshaped({16, 16, 1});
  Tape tape;
  ModelOutput out = forward(tape, p, batch);

  auto single = predict_instance(p, LabeledInstance::original("a", {slice}, 97.0));
  EXPECT_EQ(single.class_index, predict_class(out.class_logits.value()).front());
  EXPECT_EQ(single.value, out.values.value()[0]);

  auto twice = predict_instance(p, LabeledInstance::original("b", {slice, slice}, 97.0));
  EXPECT_EQ(twice.class_index, single.class_index);
  EXPECT_NEAR(twice.value, single.value, 1e-15);
}

TEST(PredictInstance, EmptySlicesIsContractError) {
  ViTParams p = init_params(small_config(), 0);
  LabeledInstance inst;
  inst.instance_id = "empty";
  try {
    predict_instance(p, inst);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Contract);
  }
}
