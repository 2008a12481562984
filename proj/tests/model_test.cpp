#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fedforge/datagen.hpp"
#include "fedforge/federated.hpp"
#include "fedforge/model.hpp"
#include "support/gated.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

namespace fedforge {
namespace {

using testing::random_leaf;

Batch toy_batch(std::size_t n, std::uint64_t seed) {
  const auto samples = data::detail::build_split(n, seed, 0, {0, 1, 2, 3, 4}, data::kArtifactTable);
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return fed::make_batch(samples, idx);
}

std::vector<std::vector<float>> snapshot(const FfdModel& m) {
  std::vector<std::vector<float>> out;
  for (const auto& t : m.parameters()) out.push_back(t.values());
  return out;
}

TEST(Residual, Examples) {
  const auto x = Tensor::vector({1, 2});
  EXPECT_EQ(residual(x, x).values(), (std::vector<float>{0, 0}));
  EXPECT_EQ(residual(x, Tensor::vector({0.5f, 1.5f})).values(), (std::vector<float>{0.5f, 0.5f}));
  EXPECT_THROW(residual(x, Tensor::vector({1})), std::invalid_argument);
}

TEST(Residual, AddsBackWithinOneUlpOfTheOperands) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto x = random_leaf({16}, rng, 0.0f, 1.0f), gx = random_leaf({16}, rng, -0.5f, 1.5f);
    const auto back = add(residual(x, gx), gx);
    for (std::size_t j = 0; j < 16; ++j) {
      const float a = x.data()[j], b = gx.data()[j];
      ASSERT_LE(testing::ulps_at_scale(back.data()[j], a, std::max(std::abs(a), std::abs(b))), 1.0);
    }
  }
}

TEST(Residual, ExactWhenOperandsAreClose) {
  // Sterbenz: x - gx is exact for gx in [x/2, 2x], and adding gx back is too.
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const float a = rng.uniform_float(0.01f, 1.0f), b = a * rng.uniform_float(0.5f, 2.0f);
    const auto back = add(residual(Tensor::vector({a}), Tensor::vector({b})), Tensor::vector({b}));
    ASSERT_EQ(back.item(), a) << a << " " << b;
  }
}

TEST(Residual, DifferentiableInBothArguments) {
  Tensor x = Tensor::vector({1, 2}, true), gx = Tensor::vector({0, 1}, true);
  auto l = sum(residual(x, gx));
  backward(l);
  EXPECT_EQ(x.grad()[0], 1.0f);
  EXPECT_EQ(gx.grad()[0], -1.0f);
}

TEST(Classify, HandSetWeights) {
  Rng rng(2);
  auto p = ClsNetParams::init(ClsNetConfig{}, rng);
  for (auto& [name, t] : p.named()) std::fill(t.data().begin(), t.data().end(), 0.0f);
  p.fc_b.data()[0] = 1.0f;
  Rng rr(3);
  const auto logits = classify(random_leaf({1, 1, 32, 32}, rr), p);
  EXPECT_EQ(logits.values(), (std::vector<float>{1, 0}));
  EXPECT_NEAR(softmax_rows(logits)[0], 0.731, 1e-3);
}

TEST(Classify, FiniteOnZeroResidualAndDeterministic) {
  Rng rng(4);
  const auto p = ClsNetParams::init(ClsNetConfig{}, rng);
  const auto zero = classify(Tensor::zeros({2, 1, 32, 32}), p);
  EXPECT_EQ(zero.shape(), (Shape{2, 2}));
  for (float v : zero.values()) EXPECT_TRUE(std::isfinite(v));
  Rng rr(5);
  const auto r = random_leaf({2, 1, 32, 32}, rr);
  EXPECT_EQ(classify(r, p).values(), classify(r, p).values());
  EXPECT_THROW(classify(Tensor::zeros({1, 3, 32, 32}), p), std::invalid_argument);
}

TEST(JointLoss, WeightedSumOfParts) {
  const auto m = FfdModel::init(ModelConfig{}, 6);
  const auto b = toy_batch(8, 1);
  for (const LossWeights w : {LossWeights{}, LossWeights{0.5f, 2.0f, 0.1f, 1.0f, 4.0f},
                              LossWeights{1.0f, 0.0f, 3.0f, 0.5f, 0.25f}}) {
    const auto jl = joint_loss(b, m, w);
    const double expect = w.mu1 * static_cast<double>(jl.l_g.item()) +
                          w.mu2 * static_cast<double>(jl.l_rec.item()) +
                          w.mu3 * static_cast<double>(jl.l_cls.item());
    EXPECT_NEAR(jl.total.item(), expect, 1e-6 * std::abs(expect));
  }
}

TEST(JointLoss, DefaultWeights) {
  const LossWeights w;
  EXPECT_EQ(w.mu1, 1.0f);
  EXPECT_EQ(w.mu2, 1.0f);
  EXPECT_EQ(w.mu3, 1.0f);
  EXPECT_EQ(w.alpha, 1.0f);
  EXPECT_EQ(w.beta, 4.0f);
}

TEST(JointLoss, InvalidLabel) {
  const auto m = FfdModel::init(ModelConfig{}, 7);
  auto b = toy_batch(2, 1);
  b.labels[0] = 2;
  EXPECT_THROW(joint_loss(b, m, LossWeights{}), std::invalid_argument);
}

TEST(JointLoss, ZeroMu3DecouplesClassifier) {
  const auto m = FfdModel::init(ModelConfig{}, 8);
  auto jl = joint_loss(toy_batch(4, 2), m, LossWeights{1, 1, 0, 1, 4});
  m.zero_grad();
  backward(jl.total);
  for (const auto& [name, t] : m.cls.named()) {
    if (!t.has_grad()) continue;
    for (float g : t.grad()) ASSERT_EQ(g, 0.0f) << name;
  }
}

TEST(JointLoss, ClassifierGradientReachesRecNet) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = FfdModel::init(ModelConfig{}, 100 + seed);
    auto jl = joint_loss(toy_batch(4, seed), m, LossWeights{0, 0, 1, 1, 4});
    m.zero_grad();
    backward(jl.total);
    for (const auto& t : {m.rec.enc1_w, m.rec.dec2_w}) {
      ASSERT_TRUE(t.has_grad());
      bool nonzero = false;
      for (float g : t.grad()) nonzero |= g != 0.0f;
      EXPECT_TRUE(nonzero);
    }
  }
}

TEST(JointLoss, LabelSymmetry) {
  auto m = FfdModel::init(ModelConfig{}, 9);
  const auto b = toy_batch(8, 3);
  const float before = joint_loss(b, m, LossWeights{}).l_cls.item();

  auto swapped = b;
  for (auto& y : swapped.labels) y = 1 - y;
  auto w = m.cls.fc_w.data();
  const std::size_t in = m.cls.fc_w.dim(1);
  for (std::size_t j = 0; j < in; ++j) std::swap(w[j], w[in + j]);
  std::swap(m.cls.fc_b.data()[0], m.cls.fc_b.data()[1]);
  EXPECT_EQ(joint_loss(swapped, m, LossWeights{}).l_cls.item(), before);
}

TEST(GatedNetwork, MatchesJointLossAtCapturePoint) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto m = FfdModel::init(ModelConfig{}, 300 + seed);
    const auto b = toy_batch(4, seed);
    testing::ReluGates g;
    const float real = joint_loss(b, m, LossWeights{}).total.item();
    EXPECT_EQ(testing::gated_joint_loss(b, m, LossWeights{}, g).item(), real);
    g.freeze();
    EXPECT_EQ(testing::gated_joint_loss(b, m, LossWeights{}, g).item(), real);
  }
}

TEST(GradCheck, CompositeLossOnParametersDownstreamOfQuantization) {
  // Encoder and codebook gradients are straight-through estimates by design
  // and are checked separately.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = FfdModel::init(ModelConfig{}, 200 + seed);
    const auto r = testing::check_joint_gradient(toy_batch(4, seed), m, 1e-3f, seed);
    EXPECT_EQ(r.coords, 12u);
    EXPECT_GT(r.analytic_norm, 0.0);
    EXPECT_LT(r.rel_error, 1e-2) << "seed " << seed;
  }
}

TEST(TrainStep, EmptyBatchIsAnError) {
  const auto m = FfdModel::init(ModelConfig{}, 10);
  SgdState sgd;
  Batch empty{Tensor::zeros({0, 1, 32, 32}), {}};
  EXPECT_THROW(train_step(empty, m, LossWeights{}, sgd), std::invalid_argument);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  const auto m = FfdModel::init(ModelConfig{}, 11);
  const auto before = snapshot(m);
  SgdState sgd{0.0f, 0.5f, {}};
  train_step(toy_batch(8, 4), m, LossWeights{}, sgd);
  EXPECT_EQ(snapshot(m), before);
}

TEST(TrainStep, Deterministic) {
  const auto run = [] {
    const auto m = FfdModel::init(ModelConfig{}, 12);
    SgdState sgd;
    const auto b = toy_batch(8, 5);
    for (int i = 0; i < 3; ++i) train_step(b, m, LossWeights{}, sgd);
    return snapshot(m);
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainStep, FitsSixteenSampleToyBatch) {
  const auto m = FfdModel::init(ModelConfig{}, 13);
  const auto b = toy_batch(16, 6);
  SgdState sgd;
  StepReport rep;
  for (int i = 0; i < 300; ++i) rep = train_step(b, m, LossWeights{}, sgd);
  NoGradGuard no_grad;
  const auto jl = joint_loss(b, m, LossWeights{});
  EXPECT_GE(batch_accuracy(jl.pass.logits, b.labels), 0.9);
}

TEST(Model, ImportRejectsForeignStructure) {
  const auto m = FfdModel::init(ModelConfig{}, 14);
  ModelConfig other;
  other.recnet.codebook_size = 8;
  const auto foreign = FfdModel::init(other, 14).export_params();
  try {
    m.import_params(foreign);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("recnet.codebook"), std::string::npos) << e.what();
  }
}

TEST(Model, ExportImportRoundTrip) {
  const auto a = FfdModel::init(ModelConfig{}, 15);
  const auto b = FfdModel::init(ModelConfig{}, 16);
  b.import_params(a.export_params());
  EXPECT_TRUE(testing::bit_identical(a.export_params(), b.export_params()));
}

}  // namespace
}  // namespace fedforge
