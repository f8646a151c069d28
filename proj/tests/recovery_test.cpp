// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "prunekit/gradcheck.hpp"
#include "prunekit/recovery.hpp"
#include "prunekit/zoo.hpp"
#include "test_util.hpp"

using namespace prunekit;
using prunekit::testing::random_tensor;

namespace {

constexpr double kLn2 = 0.69314718055994530942;

SplitDataset toy_split(std::size_t n, std::uint64_t seed = 0) {
  SynthOptions o;
  o.num_classes = 4;
  o.image_shape = {3, 8, 8};
  o.train_size = n;
  o.test_size = 32;
  o.seed = seed;
  return synth(o);
}

NetworkSpec small_vgg() { return zoo::vgg8({3, 8, 8}, 4, 4); }

Model<float> small_model(std::uint64_t seed) {
  const auto spec = small_vgg();
  return {spec, init_params<float>(spec, seed)};
}

PruningPlan drop_some(const NetworkSpec& spec, std::initializer_list<std::string> layers) {
  PruningPlan plan = identity_plan(spec);
  for (auto& m : plan.masks) {
    for (const auto& id : layers) {
      if (m.id == id) m.keep[0] = false;
    }
  }
  return plan;
}

MimicConfig kl_config(TapSet taps) {
  MimicConfig c;
  c.taps = std::move(taps);
  c.epochs = 1;
  c.batch_size = 16;
  return c;
}

bool params_equal(const ParamSet<float>& a, const ParamSet<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [name, p] : a) {
    if (!(b.at(name).value == p.value)) return false;
  }
  return true;
}

}  // namespace

TEST(Mimic, HandValues) {
  const Tensor<double> t({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor<double> s = t;
  EXPECT_EQ(mimic_mse(t, s).value, 0.0);
  EXPECT_EQ(mimic_lasso(t, s).value, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = t[i] + 1.0;
  EXPECT_DOUBLE_EQ(mimic_mse(t, s).value, 1.0);
  EXPECT_DOUBLE_EQ(mimic_mse(t, s, true).value, 6.0);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = t[i] + (i % 2 ? 2.0 : -2.0);
  EXPECT_DOUBLE_EQ(mimic_lasso(t, s).value, 2.0);
  EXPECT_THROW(mimic_mse(t, Tensor<double>({3, 2})), ShapeError);
  EXPECT_THROW(mimic_kl(t, Tensor<double>({6})), ShapeError);
}

TEST(Mimic, KlSingleSite) {
  // p = softmax(0, 0) = (0.5, 0.5); q = softmax(ln 3, 0) = (0.75, 0.25).
  const Tensor<double> t({2}, {0.0, 0.0});
  const Tensor<double> s({2}, {std::log(3.0), 0.0});
  EXPECT_NEAR(mimic_kl(t, s).value, 0.5 * std::log(2.0 / 3.0) + 0.5 * std::log(2.0), 1e-12);
  EXPECT_NEAR(mimic_kl(t, s).value, 0.143841, 1e-5);
  EXPECT_EQ(mimic_kl(t, t).value, 0.0);
}

TEST(Mimic, JsDisjointSupportIsLn2) {
  const Tensor<double> t({2}, {1000.0, 0.0});
  const Tensor<double> s({2}, {0.0, 1000.0});
  EXPECT_NEAR(mimic_js(t, s).value, kLn2, 1e-9);
  EXPECT_EQ(mimic_js(t, t).value, 0.0);
}

TEST(ChannelDistribution, HandValues) {
  const auto uniform = channel_distribution(Tensor<double>({1, 4, 1, 1}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(uniform[i], 0.25);
  const auto two = channel_distribution(Tensor<double>({2}, {1.0, 0.0}));
  EXPECT_NEAR(two[0], 0.7311, 1e-4);
  EXPECT_NEAR(two[1], 0.2689, 1e-4);
  const auto hot = channel_distribution(Tensor<double>({3}, {0.0, 1000.0, 0.0}));
  EXPECT_NEAR(hot[1], 1.0, 1e-12);
}

TEST(ChannelDistribution, SitesSumToOne) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Shape shape{1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(4), 1 + rng.below(4)};
    const auto d = channel_distribution(random_tensor<double>(shape, rng, -20, 20));
    for (std::size_t b = 0; b < shape[0]; ++b)
      for (std::size_t y = 0; y < shape[2]; ++y)
        for (std::size_t x = 0; x < shape[3]; ++x) {
          double s = 0;
          for (std::size_t c = 0; c < shape[1]; ++c) s += d.at(b, c, y, x);
          EXPECT_NEAR(s, 1.0, 1e-9);
        }
  }
}

TEST(Mimic, DivergenceProperties) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const Shape shape{1 + rng.below(2), 2 + rng.below(5), 1 + rng.below(3)};
    const auto a = random_tensor<double>(shape, rng, 0, 6);
    const auto b = random_tensor<double>(shape, rng, 0, 6);
    EXPECT_GE(mimic_kl(a, b).value, 0.0);
    EXPECT_EQ(mimic_kl(a, a).value, 0.0);
    const double ab = mimic_js(a, b).value;
    EXPECT_EQ(ab, mimic_js(b, a).value);
    EXPECT_LE(ab, kLn2);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(Mimic, GradientsMatchFiniteDifferences) {
  Rng rng(3);
  for (auto f : {MimicFunction::mse, MimicFunction::lasso, MimicFunction::kl, MimicFunction::js}) {
    for (int seed = 0; seed < 10; ++seed) {
      const Shape shape{2, 3, 2, 2};
      const auto t = random_tensor<double>(shape, rng, 0, 2);
      const auto s = random_tensor<double>(shape, rng, 0, 2);
      const auto m = mimic(f, t, s);
      auto fn = [&](const Tensor<double>& x) { return mimic(f, t, x).value; };
      const auto report = grad_check(fn, s, m.grad, 1e-4);
      EXPECT_TRUE(report.passed) << mimic_name(f) << " seed " << seed << " err " << report.max_rel_error;
    }
  }
}

TEST(Mimic, FixedPointHasZeroGradient) {
  Rng rng(4);
  const auto t = random_tensor<double>({2, 5, 3, 3}, rng, 0, 3);
  for (auto f : {MimicFunction::mse, MimicFunction::lasso, MimicFunction::kl, MimicFunction::js}) {
    const auto m = mimic(f, t, t);
    EXPECT_EQ(m.value, 0.0) << mimic_name(f);
    for (double g : m.grad.data()) EXPECT_EQ(g, 0.0) << mimic_name(f);
  }
}

TEST(MimicConfig, EnforcesTapRules) {
  const auto spec = small_vgg();
  MimicConfig c;
  c.taps = TapSet{{"relu6"}};
  EXPECT_THROW(check_mimic_config(spec, c), ConfigError);  // kl, N = 1
  c.function = MimicFunction::js;
  EXPECT_THROW(check_mimic_config(spec, c), ConfigError);
  c.taps = TapSet{{"relu2", "relu4"}};
  EXPECT_THROW(check_mimic_config(spec, c), ConfigError);  // final tap missing
  c.taps = TapSet{{"relu2", "relu6"}};
  EXPECT_NO_THROW(check_mimic_config(spec, c));
  c.function = MimicFunction::mse;
  c.taps = TapSet{{"relu3"}};
  EXPECT_NO_THROW(check_mimic_config(spec, c));
  c.taps = TapSet{};
  EXPECT_THROW(check_mimic_config(spec, c), ConfigError);
  c.taps = TapSet{{"conv3"}};
  EXPECT_THROW(check_mimic_config(spec, c), ConfigError);
}

TEST(ReconstructionLoss, MeanOfPerTapAndSingleTapMse) {
  const auto teacher = small_model(1);
  const auto student = apply_plan(teacher.spec, teacher.params, drop_some(teacher.spec, {"conv1", "conv3"}));
  Rng rng(5);
  const auto x = random_tensor<float>({4, 3, 8, 8}, rng);
  MimicConfig c = kl_config(TapSet{{"relu2", "relu4", "relu6"}});
  const auto loss = reconstruction_loss(teacher, student, c, x);
  ASSERT_EQ(loss.per_tap.size(), 3u);
  EXPECT_EQ(loss.value, (loss.per_tap[0].loss + loss.per_tap[1].loss + loss.per_tap[2].loss) * (1.0 / 3.0));

  c.function = MimicFunction::mse;
  c.taps = TapSet{{"relu4"}};
  const auto single = reconstruction_loss(teacher, student, c, x);
  const auto tt = forward_with_taps(teacher.spec, teacher.params, x, c.taps).taps.at("relu4");
  const auto st = forward_with_taps(student.spec, student.params, x, c.taps).taps.at("relu4");
  EXPECT_EQ(single.value, mimic_mse(tt, st).value);
}

TEST(ReconstructionLoss, ParameterGradientsMatchFiniteDifferences) {
  const auto spec = small_vgg();
  const Model<double> teacher{spec, init_params<double>(spec, 2)};
  const auto student = apply_plan(spec, init_params<double>(spec, 3), drop_some(spec, {"conv2"}));
  Rng rng(6);
  const auto x = random_tensor<double>({2, 3, 8, 8}, rng);
  for (auto f : {MimicFunction::mse, MimicFunction::kl, MimicFunction::js}) {
    MimicConfig c;
    c.function = f;
    c.taps = TapSet{{"relu3", "relu6"}};
    ParamSet<double> grads = student.params;
    zero_grads(grads);
    reconstruction_loss(teacher, student, c, x, &grads);
    for (const std::string key : {"conv3.weight", "conv5.weight"}) {
      auto fn = [&](const Tensor<double>& w) {
        Model<double> s = student;
        s.params.at(key).value = w;
        return reconstruction_loss(teacher, s, c, x).value;
      };
      const auto report = grad_check(fn, student.params.at(key).value, grads.at(key).grad, 1e-4);
      EXPECT_TRUE(report.passed) << mimic_name(f) << " " << key << " err " << report.max_rel_error;
    }
  }
}

TEST(Recover, UnprunedCopyIsFixedPoint) {
  const auto teacher = small_model(7);
  const auto data = toy_split(32);
  RecoverySession s(teacher, teacher, kl_config(TapSet{{"relu2", "relu6"}}));
  recover(s, data.train);
  EXPECT_TRUE(params_equal(s.student.params, teacher.params));
  for (const auto& row : s.history) EXPECT_EQ(row.loss, 0.0);
}

TEST(Recover, ZeroLrLeavesStudentUnchangedAndTeacherIntact) {
  const auto teacher = small_model(8);
  const auto student = apply_plan(teacher.spec, teacher.params, drop_some(teacher.spec, {"conv1", "conv4"}));
  const auto data = toy_split(32);
  MimicConfig c = kl_config(TapSet{{"relu2", "relu6"}});
  c.lr = 0.0;
  RecoverySession s(teacher, student, c);
  const auto teacher_sum = checksum(s.teacher.params);
  recover(s, data.train);
  EXPECT_TRUE(params_equal(s.student.params, student.params));
  EXPECT_EQ(checksum(s.teacher.params), teacher_sum);
}

TEST(Recover, ClassifierFrozenThenReleased) {
  const auto teacher = small_model(9);
  const auto student = apply_plan(teacher.spec, teacher.params, drop_some(teacher.spec, {"conv2"}));
  const auto data = toy_split(48);
  MimicConfig c = kl_config(TapSet{{"relu3", "relu6"}});
  c.lr = 1e-2;
  c.epochs = 2;
  RecoverySession s(teacher, student, c);
  recover(s, data.train, &data.test);
  EXPECT_EQ(s.student.params.at("fc1.weight").value, student.params.at("fc1.weight").value);
  EXPECT_EQ(s.student.params.at("fc2.weight").value, student.params.at("fc2.weight").value);
  EXPECT_FALSE(s.student.params.at("conv3.weight").value == student.params.at("conv3.weight").value);
  EXPECT_TRUE(s.student.params.at("fc1.weight").trainable);
  EXPECT_EQ(s.steps, 2u * 3u);
  // Two taps plus a total row per epoch; totals carry eval accuracy.
  ASSERT_EQ(s.history.size(), 6u);
  EXPECT_EQ(s.history[2].tap, "total");
  EXPECT_FALSE(std::isnan(s.history[2].accuracy));
  EXPECT_TRUE(std::isnan(s.history[0].accuracy));
}

TEST(Recover, LossDecreases) {
  const auto data = toy_split(128, 1);
  Model<float> teacher = small_model(10);
  TrainOptions t;
  t.epochs = 3;
  t.lr = 3e-3;
  t.batch_size = 32;
  finetune(teacher, data.train, t);
  const auto student = apply_plan(teacher.spec, teacher.params, drop_some(teacher.spec, {"conv1", "conv2", "conv3", "conv4"}));
  MimicConfig c = kl_config(TapSet{{"relu5", "relu6"}});
  c.lr = 3e-3;
  c.epochs = 4;
  c.batch_size = 32;
  RecoverySession s(teacher, student, c);
  recover(s, data.train);
  EXPECT_LT(s.history.back().loss, s.history[2].loss);
}

TEST(Recover, RejectsChangedTapWidth) {
  const auto teacher = small_model(11);
  const auto student = apply_plan(teacher.spec, teacher.params, drop_some(teacher.spec, {"conv2"}));
  EXPECT_THROW(RecoverySession(teacher, student, kl_config(TapSet{{"relu2", "relu6"}})), ShapeError);
  EXPECT_THROW(RecoverySession(teacher, student, kl_config(TapSet{{"relu6"}})), ConfigError);
}

TEST(Finetune, ZeroLrIsNoOpAndTrainingHelps) {
  const auto data = toy_split(128, 2);
  Model<float> m = small_model(12);
  const auto before = m.params;
  TrainOptions o;
  o.epochs = 1;
  o.lr = 0.0;
  const auto r0 = finetune(m, data.train, o);
  EXPECT_TRUE(params_equal(m.params, before));
  EXPECT_EQ(r0.steps, 2u);

  o.epochs = 5;
  o.lr = 3e-3;
  o.batch_size = 32;
  const auto r = finetune(m, data.train, o, &data.test);
  ASSERT_EQ(r.history.size(), 10u);
  for (const auto& row : r.history) EXPECT_TRUE(std::isfinite(row.loss));
  EXPECT_GE(r.history[8].accuracy, r.history[0].accuracy);
  EXPECT_LT(r.history[8].loss, r.history[0].loss);
  EXPECT_THROW(finetune(m, Dataset{}, o), ConfigError);
}

TEST(Evaluate, CountsCorrectPredictions) {
  const auto spec = small_vgg();
  Model<float> m{spec, init_params<float>(spec, 0)};
  for (auto& v : m.params.at("fc2.weight").value.data()) v = 0.0f;
  const auto data = toy_split(16, 3);
  // Constant logits: argmax picks class 0.
  std::size_t zeros = 0;
  for (int l : data.test.labels) zeros += l == 0;
  const auto r = evaluate(m, data.test);
  EXPECT_DOUBLE_EQ(r.accuracy, static_cast<double>(zeros) / static_cast<double>(data.test.size()));
  EXPECT_NEAR(r.loss, std::log(4.0), 1e-6);
}

TEST(Iterative, IdentityPlanIsNoOp) {
  const auto teacher = small_model(13);
  const auto data = toy_split(32);
  const auto r = iterative_recover_baseline(teacher, identity_plan(teacher.spec), data.train, {});
  EXPECT_EQ(r.steps, 0u);
  EXPECT_TRUE(r.layers.empty());
  EXPECT_TRUE(params_equal(r.student.params, teacher.params));
}

TEST(Iterative, StepsScaleWithPrunedLayers) {
  const auto teacher = small_model(14);
  const auto data = toy_split(40);
  IterativeOptions o;
  o.batch_size = 16;
  o.epochs_per_layer = 2;
  const std::uint64_t per_layer = 2u * batches_per_epoch(40, 16);
  std::vector<std::string> layers{"conv1", "conv2", "conv3", "conv4", "conv5"};
  for (std::size_t n = 1; n <= layers.size(); ++n) {
    PruningPlan plan = identity_plan(teacher.spec);
    for (std::size_t k = 0; k < n; ++k) {
      for (auto& m : plan.masks) {
        if (m.id == layers[k]) m.keep[1] = false;
      }
    }
    const auto r = iterative_recover_baseline(teacher, plan, data.train, o);
    EXPECT_EQ(r.steps, n * per_layer);
    ASSERT_EQ(r.layers.size(), n);
    EXPECT_EQ(r.layers[0].consumers, std::vector<std::string>{"conv2"});
    EXPECT_EQ(r.student.spec.layer(layers[n - 1]).out_channels, teacher.spec.layer(layers[n - 1]).out_channels - 1);
  }
}

TEST(Iterative, OnlyConsumersMove) {
  const auto teacher = small_model(15);
  const auto data = toy_split(32);
  IterativeOptions o;
  o.batch_size = 16;
  o.lr = 1e-2;
  const auto r = iterative_recover_baseline(teacher, drop_some(teacher.spec, {"conv3"}), data.train, o);
  EXPECT_EQ(r.student.params.at("conv1.weight").value, teacher.params.at("conv1.weight").value);
  EXPECT_EQ(r.student.params.at("conv5.weight").value, teacher.params.at("conv5.weight").value);
  EXPECT_EQ(r.student.params.at("conv4.weight").value.dim(1), teacher.params.at("conv4.weight").value.dim(1) - 1);
  EXPECT_TRUE(r.student.params.at("fc1.weight").trainable);
  EXPECT_EQ(r.layers[0].consumers, std::vector<std::string>{"conv4"});
}

TEST(History, TsvRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "prunekit_history_test.tsv";
  History h{{"recover", 1, "relu2", 0.125, std::nan("")},
            {"recover", 1, "total", 1.0 / 3.0, 0.75},
            {"finetune", 2, "ce", 1e-300, 1.0}};
  write_history_tsv(h, path);
  const auto back = read_history_tsv(path);
  ASSERT_EQ(back.size(), h.size());
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_EQ(back[i].stage, h[i].stage);
    EXPECT_EQ(back[i].epoch, h[i].epoch);
    EXPECT_EQ(back[i].tap, h[i].tap);
    EXPECT_EQ(back[i].loss, h[i].loss);
    EXPECT_EQ(std::isnan(back[i].accuracy), std::isnan(h[i].accuracy));
    if (!std::isnan(h[i].accuracy)) EXPECT_EQ(back[i].accuracy, h[i].accuracy);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(read_history_tsv(path), FormatError);
}
