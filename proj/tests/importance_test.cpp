// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "prunekit/gradcheck.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/ops.hpp"
#include "prunekit/zoo.hpp"
#include "test_util.hpp"

using namespace prunekit;
using prunekit::testing::random_spec;
using prunekit::testing::random_tensor;

namespace {

NetworkSpec small_vgg() { return zoo::vgg8({3, 8, 8}, 4, 4); }

Dataset toy_data(std::size_t n, std::uint64_t seed) {
  SynthOptions o;
  o.num_classes = 4;
  o.image_shape = {3, 8, 8};
  o.train_size = n;
  o.test_size = 4;
  o.seed = seed;
  return synth(o).train;
}

ImportanceProfile random_profile(const NetworkSpec& spec, Rng& rng, double lo = -1.5, double hi = 1.5) {
  ImportanceProfile p = initial_profile(spec);
  for (auto& l : p.layers) {
    for (auto& b : l.beta) b = rng.uniform(lo, hi);
  }
  return p;
}

Shape batch_shape(const NetworkSpec& spec, std::size_t n) {
  Shape s{n};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  return s;
}

}  // namespace

TEST(ScaledForward, AllOnesIsPlainForward) {
  Rng rng(1);
  for (int trial = 0; trial < 8; ++trial) {
    const auto spec = random_spec(rng);
    const auto params = init_params<float>(spec, trial);
    const auto x = random_tensor<float>(batch_shape(spec, 3), rng);
    const auto plain = forward_with_taps(spec, params, x, TapSet{}).logits;
    EXPECT_EQ(scaled_forward(spec, params, initial_profile(spec), x), plain);
  }
}

TEST(ScaledForward, ZeroBetaEqualsDeadChannel) {
  const auto spec = small_vgg();
  auto params = init_params<double>(spec, 3);
  Rng rng(2);
  const auto x = random_tensor<double>(batch_shape(spec, 2), rng);
  ImportanceProfile p = initial_profile(spec);
  p.layers[1].beta[2] = 0.0;  // conv2, filter 2
  const auto scaled = scaled_forward(spec, params, p, x);

  auto& w = params.at("conv2.weight").value;
  const std::size_t per_filter = w.size() / w.dim(0);
  for (std::size_t i = 0; i < per_filter; ++i) w[2 * per_filter + i] = 0.0;
  EXPECT_EQ(scaled, forward_with_taps(spec, params, x, TapSet{}).logits);
}

TEST(ScaledForward, SignInvariance) {
  const auto spec = small_vgg();
  const auto params = init_params<double>(spec, 5);
  Rng rng(3);
  const auto x = random_tensor<double>(batch_shape(spec, 2), rng);
  ImportanceProfile p = random_profile(spec, rng);
  ImportanceProfile q = p;
  for (auto& l : q.layers) {
    for (std::size_t j = 0; j < l.beta.size(); j += 2) l.beta[j] = -l.beta[j];
  }
  EXPECT_EQ(scaled_forward(spec, params, p, x), scaled_forward(spec, params, q, x));
  const std::vector<int> labels{0, 3};
  const auto lp = importance_loss(scaled_forward(spec, params, p, x), labels, p);
  const auto lq = importance_loss(scaled_forward(spec, params, q, x), labels, q);
  EXPECT_EQ(lp.value, lq.value);
  const auto sp = layer_scores(p), sq = layer_scores(q);
  for (std::size_t i = 0; i < sp.size(); ++i) {
    EXPECT_EQ(sp[i].score, sq[i].score);
    EXPECT_EQ(sp[i].rank, sq[i].rank);
  }
}

TEST(ScaledForward, RejectsMismatchedProfile) {
  const auto spec = small_vgg();
  const auto params = init_params<float>(spec, 0);
  ImportanceProfile p = initial_profile(spec);
  p.layers[0].beta.pop_back();
  EXPECT_THROW(scaled_forward(spec, params, p, Tensor<float>(batch_shape(spec, 1))), ConfigError);
  p = initial_profile(spec);
  p.layers.erase(p.layers.begin() + 2);
  EXPECT_THROW(scaled_forward(spec, params, p, Tensor<float>(batch_shape(spec, 1))), ConfigError);
}

TEST(ImportanceLoss, HandSum) {
  // Two classes, logits (0, z) with label 0: CE = log(1 + e^z). Pick CE = 0.7.
  const double z = std::log(std::exp(0.7) - 1.0);
  const Tensor<double> logits({1, 2}, {0.0, z});
  const std::vector<int> labels{0};
  ImportanceProfile p;
  p.lambda = 1.0;
  p.layers = {{"a", std::vector<double>(4, 1.0), 1.0}, {"b", std::vector<double>(6, 1.0), 1.0}};
  const auto loss = importance_loss(logits, labels, p);
  EXPECT_NEAR(loss.cross_entropy, 0.7, 1e-12);
  EXPECT_NEAR(loss.value, 10.7, 1e-12);

  p.lambda = 0.0;
  const auto ce_only = importance_loss(logits, labels, p);
  EXPECT_EQ(ce_only.value, cross_entropy(logits, labels).value);
}

TEST(ImportanceGradient, MatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const auto spec = random_spec(rng);
    const auto params = init_params<double>(spec, trial);
    const auto x = random_tensor<double>(batch_shape(spec, 3), rng);
    std::vector<int> labels(3);
    for (auto& l : labels) l = static_cast<int>(rng.below(spec.num_classes));
    ImportanceProfile p = random_profile(spec, rng, 0.3, 1.5);
    for (auto& l : p.layers) {
      for (auto& b : l.beta) b *= rng.below(2) ? 1.0 : -1.0;
    }
    p.lambda = 0.05;
    const auto grads = importance_gradient(spec, params, p, x, labels);

    // Flatten beta into one vector for the checker.
    std::vector<double> flat, analytic;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
      flat.insert(flat.end(), p.layers[k].beta.begin(), p.layers[k].beta.end());
      analytic.insert(analytic.end(), grads[k].begin(), grads[k].end());
    }
    auto f = [&](const Tensor<double>& v) {
      ImportanceProfile q = p;
      std::size_t i = 0;
      for (auto& l : q.layers) {
        for (auto& b : l.beta) b = v[i++];
      }
      return importance_loss(scaled_forward(spec, params, q, x), labels, q).value;
    };
    const auto report = grad_check(f, Tensor<double>({flat.size()}, flat),
                                   Tensor<double>({analytic.size()}, analytic), 1e-4);
    EXPECT_TRUE(report.passed) << "trial " << trial << " max rel err " << report.max_rel_error;
  }
}

TEST(ImportanceGradient, ZeroBetaHasZeroSubgradient) {
  const auto spec = small_vgg();
  const auto params = init_params<double>(spec, 1);
  Rng rng(4);
  const auto x = random_tensor<double>(batch_shape(spec, 2), rng);
  ImportanceProfile p = initial_profile(spec);
  p.layers[0].beta[1] = 0.0;
  const auto g = importance_gradient(spec, params, p, x, std::vector<int>{1, 2});
  EXPECT_EQ(g[0][1], 0.0);
}

TEST(LearnImportance, OneStepWithoutTaskGradient) {
  // A zero classifier makes the logits constant, so only the penalty moves
  // beta: the first Adam step is lr * sign(lambda) = 0.1.
  const auto spec = small_vgg();
  auto params = init_params<float>(spec, 2);
  params.at("fc2.weight").value.fill(0.0f);
  const Dataset data = toy_data(16, 1);
  ImportanceOptions o;
  o.lambda = 1.0;
  o.lr = 0.1;
  o.epochs = 1;
  o.batch_size = 16;
  const auto p = learn_importance(spec, params, data, o);
  EXPECT_EQ(p.steps, 1u);
  for (const auto& l : p.layers) {
    for (double b : l.beta) EXPECT_NEAR(b, 0.9, 1e-7);
  }
}

TEST(LearnImportance, ZeroLambdaZeroLrKeepsOnes) {
  const auto spec = small_vgg();
  const auto params = init_params<float>(spec, 2);
  ImportanceOptions o;
  o.lambda = 0.0;
  o.lr = 0.0;
  o.epochs = 1;
  o.batch_size = 8;
  const auto p = learn_importance(spec, params, toy_data(32, 2), o);
  for (const auto& l : p.layers) {
    for (double b : l.beta) EXPECT_EQ(b, 1.0);
  }
  const auto scores = layer_scores(p);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    EXPECT_EQ(scores[i].score, 1.0);
    EXPECT_EQ(scores[i].rank, i + 1);
  }
}

TEST(LearnImportance, WeightsUntouchedAndReproducible) {
  const auto spec = small_vgg();
  const auto params = init_params<float>(spec, 9);
  const auto before = checksum(params);
  const Dataset data = toy_data(48, 3);
  ImportanceOptions o;
  o.epochs = 2;
  o.batch_size = 16;
  o.seed = 5;
  const auto a = learn_importance(spec, params, data, o);
  EXPECT_EQ(checksum(params), before);
  const auto b = learn_importance(spec, params, data, o);
  ASSERT_EQ(a.layers.size(), b.layers.size());
  for (std::size_t k = 0; k < a.layers.size(); ++k) EXPECT_EQ(a.layers[k].beta, b.layers[k].beta);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  EXPECT_EQ(a.steps, 2u * 3u);
}

TEST(LearnImportance, RejectsBadInputs) {
  const auto spec = small_vgg();
  const auto params = init_params<float>(spec, 0);
  ImportanceOptions o;
  o.epochs = 0;
  EXPECT_THROW(learn_importance(spec, params, toy_data(8, 0), o), ConfigError);
  o.epochs = 1;
  EXPECT_THROW(learn_importance(spec, params, Dataset{}, o), ConfigError);
}

TEST(LayerScores, HandMean) {
  ImportanceProfile p;
  p.layers = {{"a", {0.2, -0.4, 0.6}, 1.0}, {"b", {1.0, 1.0}, 1.0}};
  const auto s = layer_scores(p);
  EXPECT_NEAR(s[0].score, 0.4, 1e-15);
  EXPECT_EQ(s[0].rank, 2u);
  EXPECT_EQ(s[1].rank, 1u);
  EXPECT_NEAR(layer_scores(p, ScoreReduction::sum)[0].score, 1.2, 1e-15);
  EXPECT_THROW(layer_scores(ImportanceProfile{}), ConfigError);
}

TEST(LayerScores, TiesGoToShallowerLayer) {
  ImportanceProfile p;
  p.layers = {{"a", {0.5}, 1.0}, {"b", {0.7}, 1.0}, {"c", {0.5}, 1.0}};
  const auto s = layer_scores(p);
  EXPECT_EQ(s[1].rank, 1u);
  EXPECT_EQ(s[0].rank, 2u);
  EXPECT_EQ(s[2].rank, 3u);
}

TEST(LayerScores, PositiveScalingOfOneLayer) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const auto spec = small_vgg();
    ImportanceProfile p = random_profile(spec, rng);
    const auto base = layer_scores(p);
    const std::size_t k = rng.below(p.layers.size());
    const double c = rng.uniform(0.1, 4.0);
    for (auto& b : p.layers[k].beta) b *= c;
    const auto scaled = layer_scores(p);
    for (std::size_t i = 0; i < base.size(); ++i) {
      if (i == k) {
        EXPECT_NEAR(scaled[i].score, c * base[i].score, 1e-12 * c * base[i].score);
        continue;
      }
      EXPECT_EQ(scaled[i].score, base[i].score);
      for (std::size_t j = 0; j < base.size(); ++j) {
        if (j == k || j == i) continue;
        EXPECT_EQ(scaled[i].rank < scaled[j].rank, base[i].rank < base[j].rank);
      }
    }
  }
}
