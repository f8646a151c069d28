// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "prunekit/graph.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/serialize.hpp"
#include "prunekit/zoo.hpp"
#include "test_util.hpp"

using namespace prunekit;
using prunekit::testing::random_plan;
using prunekit::testing::random_spec;
using prunekit::testing::zero_masked;
using prunekit::testing::random_tensor;

namespace {

// conv a (3) -> conv b (2) -> conv c (2, final) -> classifier.
NetworkSpec three_convs() {
  SpecBuilder b("three", {1, 4, 4}, 2);
  b.conv("a", 3, 3, 1, 1).relu("ra").conv("b", 2, 3, 1, 1).relu("rb").conv("c", 2, 3, 1, 1).relu("rc");
  b.flatten("f").linear("fc", 2);
  return b.build();
}

ImportanceProfile profile_with(const NetworkSpec& spec, std::vector<std::vector<double>> betas) {
  ImportanceProfile p = initial_profile(spec);
  for (std::size_t k = 0; k < betas.size(); ++k) p.layers[k].beta = betas[k];
  return p;
}

std::vector<bool> bits(std::initializer_list<int> v) {
  std::vector<bool> out;
  for (int b : v) out.push_back(b != 0);
  return out;
}

Shape batch_shape(const NetworkSpec& spec, std::size_t n) {
  Shape s{n};
  s.insert(s.end(), spec.input_shape.begin(), spec.input_shape.end());
  return s;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(static_cast<double>(a[i]) - b[i]));
  return d;
}

}  // namespace

TEST(BuildPlan, HandExample) {
  const auto spec = three_convs();
  const auto profile = profile_with(spec, {{0.9, 0.1, 0.8}, {0.5, 0.6}, {1.0, 1.0}});
  const auto plan = build_plan(spec, &profile, TapSet{}, {PruneTarget::filters(0.4), Strategy::beta, 0, 1});
  EXPECT_EQ(plan.find("a")->keep, bits({1, 0, 1}));
  EXPECT_EQ(plan.find("b")->keep, bits({0, 1}));
  EXPECT_TRUE(plan.find("c")->all_kept());

  const auto stats = plan_stats(plan, spec);
  EXPECT_DOUBLE_EQ(stats.layers[0].rate, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(stats.layers[1].rate, 0.5);
  EXPECT_DOUBLE_EQ(stats.layers[2].rate, 1.0);
  EXPECT_LT(stats.flops.pruned_total, stats.flops.original_total);
}

TEST(BuildPlan, ZeroRateIsIdentity) {
  const auto spec = zoo::vgg8({3, 8, 8}, 4, 4);
  const auto params = init_params<float>(spec, 1);
  const auto profile = initial_profile(spec);
  for (auto target : {PruneTarget::filters(0.0), PruneTarget::flops(0.0), PruneTarget::speed(1.0)}) {
    const auto plan = build_plan(spec, &profile, TapSet{{"relu6"}}, {target, Strategy::beta, 0, 1});
    EXPECT_TRUE(plan.is_identity());
    const auto pruned = apply_plan(spec, params, plan);
    EXPECT_EQ(spec_to_json(pruned.spec).dump(), spec_to_json(spec).dump());
    ASSERT_EQ(pruned.params.size(), params.size());
    for (const auto& [name, p] : params) EXPECT_EQ(pruned.params.at(name).value, p.value) << name;
  }
}

TEST(BuildPlan, AllOnesStatsAreUnitRates) {
  const auto spec = zoo::vgg8();
  for (const auto& l : plan_stats(identity_plan(spec), spec).layers) EXPECT_EQ(l.rate, 1.0);
}

TEST(ApplyPlan, MaskedEquivalenceOracle) {
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const auto spec = random_spec(rng);
    const auto params = init_params<double>(spec, trial);
    const auto plan = random_plan(spec, rng);
    const auto pruned = apply_plan(spec, params, plan);
    const auto masked = zero_masked(spec, params, plan);
    const auto x = random_tensor<double>(batch_shape(spec, 3), rng);
    const auto a = run_forward(pruned.spec, pruned.params, x).logits();
    const auto b = run_forward(spec, masked, x).logits();
    EXPECT_LT(max_abs_diff(a, b), 1e-10) << "trial " << trial;

    const auto pf = apply_plan(spec, cast_params<float>(params), plan);
    const auto af = run_forward(pf.spec, pf.params, x.cast<float>()).logits();
    const auto bf = run_forward(spec, cast_params<float>(masked), x.cast<float>()).logits();
    EXPECT_LT(max_abs_diff(af, bf), 1e-6) << "trial " << trial;
  }
}

TEST(ApplyPlan, SinglePrunedLayerThreeToTwo) {
  const auto spec = three_convs();
  const auto params = init_params<double>(spec, 3);
  PruningPlan plan = identity_plan(spec);
  plan.masks[0].keep = bits({1, 0, 1});
  const auto pruned = apply_plan(spec, params, plan);
  EXPECT_EQ(pruned.spec.layer("a").out_channels, 2u);
  EXPECT_EQ(pruned.params.at("a.weight").value.shape(), (Shape{2, 1, 3, 3}));
  EXPECT_EQ(pruned.params.at("b.weight").value.shape(), (Shape{2, 2, 3, 3}));
  Rng rng(4);
  const auto x = random_tensor<double>(batch_shape(spec, 2), rng);
  EXPECT_LT(max_abs_diff(run_forward(pruned.spec, pruned.params, x).logits(),
                         run_forward(spec, zero_masked(spec, params, plan), x).logits()),
            1e-12);
}

TEST(ApplyPlan, FoldEqualsScaledForward) {
  Rng rng(33);
  for (int trial = 0; trial < 15; ++trial) {
    const auto spec = random_spec(rng);
    const auto params = init_params<double>(spec, trial);
    const auto plan = random_plan(spec, rng);
    ImportanceProfile profile = initial_profile(spec);
    const auto prunable = prunable_convs(spec);
    for (auto& l : profile.layers) {
      const bool p = std::find(prunable.begin(), prunable.end(), spec.index_of(l.id)) != prunable.end();
      for (std::size_t c = 0; c < l.beta.size(); ++c) {
        if (p) l.beta[c] = plan.find(l.id)->keep[c] ? rng.uniform(-1.5, 1.5) : 0.0;
      }
    }
    const auto folded = apply_plan(spec, params, plan, &profile);
    const auto x = random_tensor<double>(batch_shape(spec, 2), rng);
    EXPECT_LT(max_abs_diff(run_forward(folded.spec, folded.params, x).logits(), scaled_forward(spec, params, profile, x)),
              1e-10)
        << "trial " << trial;
  }
}

TEST(ApplyPlan, CrucialAndFinalWidthsSurvive) {
  for (const auto& spec : {zoo::vgg8(), zoo::resnet3(), zoo::vgg16()}) {
    Rng rng(5);
    const auto scores = layer_scores(initial_profile(spec));
    for (std::size_t n = 1; n <= 3; ++n) {
      const TapSet crucial = select_crucial(spec, scores, n);
      const auto plan = random_plan(spec, rng, crucial);
      const auto after = pruned_spec(spec, plan);
      for (std::size_t idx : crucial_convs(spec, crucial)) {
        EXPECT_EQ(after.layers[idx].out_channels, spec.layers[idx].out_channels);
      }
      EXPECT_EQ(after.layer(spec.layers[final_conv(spec)].id).out_channels, spec.layers[final_conv(spec)].out_channels);
      for (const auto& tap : crucial.ids) EXPECT_EQ(after.layer(tap).out_shape, spec.layer(tap).out_shape);
      if (!plan.is_identity()) EXPECT_LT(flops_total(after).total, flops_total(spec).total);
    }
  }
}

TEST(ApplyPlan, RejectsForbiddenMasks) {
  const auto spec = zoo::vgg8({3, 8, 8}, 4, 4);
  const auto params = init_params<float>(spec, 0);
  PruningPlan plan = identity_plan(spec);
  plan.masks.back().keep[0] = false;  // final conv
  EXPECT_THROW(apply_plan(spec, params, plan), ConfigError);

  plan = identity_plan(spec);
  plan.crucial = TapSet{{"relu2", "relu6"}};
  plan.masks[1].keep[0] = false;
  EXPECT_THROW(check_plan(spec, plan), ConfigError);

  plan = identity_plan(spec);
  std::fill(plan.masks[0].keep.begin(), plan.masks[0].keep.end(), false);
  EXPECT_THROW(check_plan(spec, plan), ConfigError);

  const auto res = zoo::resnet3({3, 8, 8}, 4, 4);
  plan = identity_plan(res);
  for (auto& m : plan.masks) {
    if (m.id == "res1b") m.keep[0] = false;
  }
  EXPECT_THROW(apply_plan(res, init_params<float>(res, 0), plan), ConfigError);
}

TEST(SelectCrucial, HandExamples) {
  const auto spec = three_convs();
  const std::vector<LayerScore> scores{{"a", 0.9, 1}, {"b", 0.5, 2}, {"c", 0.2, 3}};
  EXPECT_EQ(select_crucial(spec, scores, 2), (TapSet{{"ra", "rc"}}));
  EXPECT_EQ(select_crucial(spec, scores, 1), (TapSet{{"rc"}}));
  EXPECT_EQ(select_crucial(spec, scores, 3), (TapSet{{"ra", "rb", "rc"}}));
  const std::vector<LayerScore> final_best{{"a", 0.1, 3}, {"b", 0.5, 2}, {"c", 0.9, 1}};
  EXPECT_EQ(select_crucial(spec, final_best, 1), (TapSet{{"rc"}}));
  const std::vector<LayerScore> ties{{"a", 0.5, 1}, {"b", 0.5, 2}, {"c", 0.1, 3}};
  EXPECT_EQ(select_crucial(spec, ties, 2), (TapSet{{"ra", "rc"}}));
  EXPECT_THROW(select_crucial(spec, scores, 4), ConfigError);
  EXPECT_THROW(select_crucial(spec, scores, 0), ConfigError);
}

TEST(SelectCrucial, ResnetUsesJunctions) {
  const auto spec = zoo::resnet3();
  const auto crucial = select_crucial(spec, layer_scores(initial_profile(spec)), 2);
  for (const auto& id : crucial.ids) EXPECT_NE(id.find("_relu"), std::string::npos);
  EXPECT_TRUE(crucial.contains("res3_relu"));
}

TEST(BuildPlan, InfeasibleTargetNamesConstraint) {
  const auto spec = zoo::vgg8({3, 8, 8}, 4, 4);
  const auto profile = initial_profile(spec);
  const TapSet crucial{{"relu1", "relu2", "relu3", "relu6"}};
  try {
    build_plan(spec, &profile, crucial, {PruneTarget::flops(0.95), Strategy::beta, 0, 1});
    FAIL() << "expected an infeasible-target error";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("crucial"), std::string::npos);
    EXPECT_NE(msg.find("floor"), std::string::npos);
  }
  EXPECT_THROW(build_plan(spec, &profile, crucial, {PruneTarget::filters(0.99), Strategy::beta, 0, 4}), ConfigError);
  EXPECT_THROW(build_plan(spec, nullptr, crucial, {PruneTarget::filters(0.5), Strategy::beta, 0, 1}), ConfigError);
  EXPECT_THROW(build_plan(spec, &profile, crucial, {PruneTarget::filters(1.0), Strategy::beta, 0, 1}), ConfigError);
}

TEST(BuildPlan, FilterFractionRemovesCeilOfPool) {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    const auto spec = random_spec(rng);
    const auto pool = pool_layers(spec, TapSet{});
    std::size_t total = 0;
    for (std::size_t i : pool) total += spec.layers[i].out_channels;
    ImportanceProfile profile = initial_profile(spec);
    for (auto& l : profile.layers) {
      for (auto& b : l.beta) b = rng.uniform(-1, 1);
    }
    const double r = rng.uniform(0.0, 0.5);
    const std::size_t expect = static_cast<std::size_t>(std::ceil(r * static_cast<double>(total) - 1e-9));
    for (Strategy s : {Strategy::beta, Strategy::random, Strategy::first_k}) {
      try {
        const auto plan = build_plan(spec, &profile, TapSet{}, {PruneTarget::filters(r), s, 7, 1});
        EXPECT_EQ(plan.removed(), expect);
        check_plan(spec, plan);
      } catch (const ConfigError&) {
        // Only legitimate when the floor forbids that many removals.
        std::size_t removable = 0;
        for (std::size_t i : pool) removable += spec.layers[i].out_channels - 1;
        EXPECT_GT(expect, removable);
      }
    }
  }
}

TEST(BuildPlan, FlopsTargetOvershootsByAtMostOneFilter) {
  const auto spec = zoo::vgg8();
  Rng rng(13);
  ImportanceProfile profile = initial_profile(spec);
  for (auto& l : profile.layers) {
    for (auto& b : l.beta) b = rng.uniform(0, 1);
  }
  const TapSet crucial{{"relu6"}};
  std::size_t pool = 0;
  for (std::size_t i : pool_layers(spec, crucial)) pool += spec.layers[i].out_channels;
  for (double goal : {0.1, 0.3, 0.5, 0.7}) {
    const auto plan = build_plan(spec, &profile, crucial, {PruneTarget::flops(goal), Strategy::beta, 0, 1});
    const double got = plan_stats(plan, spec).flops.pruned_pct;
    EXPECT_GE(got, goal);
    // The same order stopped one filter earlier misses the goal.
    const double r = static_cast<double>(plan.removed() - 1) / static_cast<double>(pool);
    const auto shorter = build_plan(spec, &profile, crucial, {PruneTarget::filters(r), Strategy::beta, 0, 1});
    ASSERT_EQ(shorter.removed() + 1, plan.removed());
    EXPECT_LT(plan_stats(shorter, spec).flops.pruned_pct, goal);
  }
}

TEST(BuildPlan, SpeedupOnToyVgg) {
  const auto spec = zoo::vgg8();
  Rng rng(14);
  ImportanceProfile profile = initial_profile(spec);
  for (auto& l : profile.layers) {
    for (auto& b : l.beta) b = rng.uniform(0, 1);
  }
  const auto plan = build_plan(spec, &profile, TapSet{{"relu6"}}, {PruneTarget::speed(4.4), Strategy::beta, 0, 1});
  EXPECT_NEAR(plan_stats(plan, spec).flops.pruned_pct * 100.0, 77.3, 0.5);
}

TEST(BuildPlan, BetaPlansIgnorePositiveRescaling) {
  Rng rng(15);
  const auto spec = zoo::vgg8();
  ImportanceProfile profile = initial_profile(spec);
  for (auto& l : profile.layers) {
    for (auto& b : l.beta) b = rng.uniform(-1, 1);
  }
  for (double c : {0.001, 0.5, 3.0, 1000.0}) {
    ImportanceProfile scaled = profile;
    for (auto& l : scaled.layers) {
      for (auto& b : l.beta) b *= c;
    }
    for (auto target : {PruneTarget::filters(0.4), PruneTarget::flops(0.5)}) {
      const PlanOptions o{target, Strategy::beta, 0, 1};
      EXPECT_EQ(build_plan(spec, &profile, TapSet{{"relu6"}}, o).masks,
                build_plan(spec, &scaled, TapSet{{"relu6"}}, o).masks);
    }
  }
}

TEST(BuildPlan, RandomIsSeeded) {
  const auto spec = zoo::vgg8();
  const PlanOptions a{PruneTarget::filters(0.5), Strategy::random, 3, 1};
  PlanOptions b = a;
  b.seed = 4;
  const auto p1 = build_plan(spec, nullptr, TapSet{{"relu6"}}, a);
  EXPECT_EQ(p1, build_plan(spec, nullptr, TapSet{{"relu6"}}, a));
  EXPECT_NE(p1.masks, build_plan(spec, nullptr, TapSet{{"relu6"}}, b).masks);
  // Uniform per-layer rate.
  for (const auto& l : plan_stats(p1, spec).layers) {
    if (l.prunable) EXPECT_NEAR(l.rate, 0.5, 1.0 / static_cast<double>(l.total));
  }
}

TEST(BuildPlan, FirstKAndMaxResponse) {
  const auto spec = three_convs();
  auto params = init_params<float>(spec, 0);
  const PlanOptions fk{PruneTarget::filters(0.4), Strategy::first_k, 0, 1};
  const auto p = build_plan(spec, nullptr, TapSet{}, fk);
  EXPECT_EQ(p.find("a")->keep, bits({1, 1, 0}));
  EXPECT_EQ(p.find("b")->keep, bits({1, 0}));

  // Filter weight sums 3, 1, 2 for a and 5, 4 for b.
  auto& wa = params.at("a.weight").value;
  const std::vector<float> sums_a{3, 1, 2};
  for (std::size_t f = 0; f < 3; ++f) {
    for (std::size_t k = 0; k < 9; ++k) wa[f * 9 + k] = (k % 2 ? -1.0f : 1.0f) * sums_a[f] / 9.0f;
  }
  auto& wb = params.at("b.weight").value;
  const std::vector<float> sums_b{5, 4};
  for (std::size_t f = 0; f < 2; ++f) {
    for (std::size_t k = 0; k < 27; ++k) wb[f * 27 + k] = sums_b[f] / 27.0f;
  }
  const PlanOptions mr{PruneTarget::filters(0.4), Strategy::max_response, 0, 1};
  const auto q = build_plan(spec, nullptr, TapSet{}, mr, &params);
  EXPECT_EQ(q.find("a")->keep, bits({1, 0, 1}));
  EXPECT_EQ(q.find("b")->keep, bits({1, 0}));
  EXPECT_THROW(build_plan(spec, nullptr, TapSet{}, mr), ConfigError);
}

TEST(PlanDocument, RoundTrip) {
  const auto spec = zoo::vgg8();
  Rng rng(16);
  const auto plan = random_plan(spec, rng, TapSet{{"relu2", "relu6"}});
  const auto back = plan_from_json(Json::parse(plan_to_json(plan).dump()));
  EXPECT_EQ(back, plan);
  EXPECT_EQ(mask_bits(bits({1, 0, 1, 1})), "1011");
  EXPECT_EQ(parse_mask_bits("0110"), bits({0, 1, 1, 0}));
  EXPECT_THROW(parse_mask_bits("01x"), FormatError);
}
