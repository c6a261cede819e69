#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "imaboost/ima.hpp"
#include "oracles.hpp"

using namespace imaboost;

namespace {

SyntheticDataset one_object_per_image(std::size_t images, int classes, std::uint64_t seed) {
  SceneConfig c;
  c.image_count = images;
  c.num_classes = classes;
  c.min_objects = c.max_objects = 1;
  c.seed = seed;
  return generate(c);
}

const BBox kBox{0.5, 0.5, 0.2, 0.2};

}  // namespace

TEST(Weights, InitIsUniform) {
  const auto s = init_weights(4);
  EXPECT_EQ(s.iteration, 1);
  EXPECT_EQ(s.weights, std::vector<double>(4, 0.25));
  EXPECT_NO_THROW(s.validate());
  EXPECT_THROW(init_weights(0), std::invalid_argument);
  WeightState bad{1, {0.5, 0.5, 0.0}};
  EXPECT_THROW(bad.validate(), std::logic_error);
}

TEST(Weights, AnchorsInheritTheirObjectWeight) {
  MatchAssignment m;
  m.pos = {{3, 0}, {7, 1}, {9, 1}};
  const WeightState s{1, {0.1, 0.2, 0.3, 0.4}};
  EXPECT_EQ(assign_anchor_weights(m, s), (std::vector<double>{0.1, 0.2, 0.2}));
  EXPECT_EQ(assign_anchor_weights(m, s, 2), (std::vector<double>{0.3, 0.4, 0.4}));
  EXPECT_THROW(assign_anchor_weights(m, s, 3), std::out_of_range);
}

TEST(Indicator, OverlapAndClass) {
  const GroundTruthObject obj{2, kBox, false};
  // Width 0.2 * 0.6 / 1 -> IoU 0.6 for a concentric narrower box.
  const std::vector<Detection> good{{2, 0.9, {0.5, 0.5, 0.12, 0.2}}};
  const std::vector<Detection> weak{{2, 0.9, {0.5, 0.5, 0.08, 0.2}}};
  const std::vector<Detection> wrong{{1, 0.9, kBox}};
  EXPECT_EQ(detection_indicator(obj, good), 0);
  EXPECT_EQ(detection_indicator(obj, weak), 1);
  EXPECT_EQ(detection_indicator(obj, wrong), 1);
  EXPECT_EQ(detection_indicator(obj, std::vector<Detection>{}), 1);
}

TEST(ErrorRate, Values) {
  const WeightState u = init_weights(4);
  EXPECT_DOUBLE_EQ(error_rate(u, std::vector<int>{1, 0, 0, 0}), 0.25);
  const WeightState s{1, {0.5, 0.2, 0.2, 0.1}};
  EXPECT_DOUBLE_EQ(error_rate(s, std::vector<int>{1, 1, 0, 0}), 0.7);
  EXPECT_THROW(error_rate(s, std::vector<int>{1}), std::invalid_argument);
}

TEST(ModelWeight, Values) {
  EXPECT_NEAR(model_weight(0.5, 2), 0.0, 1e-15);
  EXPECT_NEAR(model_weight(0.5, 3), std::log(2.0), 1e-15);
  EXPECT_NEAR(model_weight(0.0, 2), std::log((1 - 1e-8) / 1e-8), 1e-9);
  EXPECT_NEAR(model_weight(0.0, 2), 18.42, 0.01);
  EXPECT_LT(model_weight(0.7, 2), 0.0);
  EXPECT_THROW(model_weight(0.3, 1), std::invalid_argument);
}

TEST(Update, DetectedObjectsGain) {
  const WeightState u = init_weights(2);
  const auto next = update_weights(u, std::vector<int>{0, 1}, std::log(2.0));
  EXPECT_EQ(next.iteration, 2);
  EXPECT_NEAR(next.weights[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(next.weights[1], 1.0 / 3.0, 1e-15);
  const auto same = update_weights(u, std::vector<int>{0, 0}, 3.0);
  EXPECT_NEAR(same.weights[0], 0.5, 1e-15);
}

TEST(Update, ComplementedIndicatorsGiveSammeDirection) {
  Rng rng(41);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 1 + rng.below(12);
    WeightState s{1, std::vector<double>(n)};
    double z = 0;
    for (double& w : s.weights) z += (w = rng.uniform(0.01, 1.0));
    for (double& w : s.weights) w /= z;
    std::vector<int> ind(n), flipped(n);
    for (std::size_t j = 0; j < n; ++j) flipped[j] = 1 - (ind[j] = static_cast<int>(rng.below(2)));
    const double alpha = rng.uniform(-2.0, 4.0);
    const auto ours = update_weights(s, ind, alpha);
    const auto ref = oracle::samme_update(s.weights, flipped, alpha);
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(ours.weights[j], ref[j], 1e-12);
  }
}

TEST(Fusion, RescoreScalesScores) {
  const std::vector<Detection> d{{1, 0.5, kBox}};
  EXPECT_EQ(rescore(d, 3.0)[0].score, 1.5);
}

TEST(Fusion, HigherAlphaWinsOverlap) {
  const ImageDetections a{{{1, 0.9, kBox}}};
  const ImageDetections b{{{1, 0.6, {0.51, 0.5, 0.2, 0.2}}}};
  const std::vector<ImageDetections> models{a, b};
  const auto out = fuse_predictions(models, std::vector<double>{1.0, 2.0});
  ASSERT_EQ(out[0].size(), 1u);
  EXPECT_NEAR(out[0][0].score, 1.2, 1e-15);
  EXPECT_EQ(out[0][0].box.cx, 0.51);
}

TEST(Fusion, DisjointDetectionsSurvive) {
  const ImageDetections a{{{1, 0.9, kBox}}};
  const ImageDetections b{{{2, 0.6, kBox}, {1, 0.3, {0.1, 0.1, 0.1, 0.1}}}};
  const std::vector<ImageDetections> models{a, b};
  const auto out = fuse_predictions(models, std::vector<double>{1.0, 1.0});
  EXPECT_EQ(out[0].size(), 3u);
  EXPECT_THROW(fuse_predictions(models, std::vector<double>{1.0}), std::invalid_argument);
}

TEST(Fusion, MatchesOracle) {
  Rng rng(43);
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 1 + rng.below(4);
    std::vector<ImageDetections> models;
    std::vector<std::vector<Detection>> flat;
    std::vector<double> alphas;
    for (std::size_t m = 0; m < k; ++m) {
      std::vector<Detection> d;
      for (std::size_t i = 0, n = rng.below(30); i < n; ++i)
        d.push_back({1 + static_cast<int>(rng.below(2)), rng.uniform(), oracle::random_box(rng, 0.1, 0.4)});
      models.push_back({d});
      flat.push_back(d);
      alphas.push_back(rng.uniform(0.1, 3.0));
    }
    const auto out = fuse_predictions(models, alphas);
    EXPECT_EQ(oracle::sorted(out[0]), oracle::sorted(oracle::fuse(flat, alphas, 0.45, 0.01)));
  }
}

TEST(RunIma, SingleRound) {
  const auto ds = one_object_per_image(4, 3, 1);
  OracleDetectorSpec spec;
  spec.miss_schedule = {{2}};
  OracleDetector det(spec);
  const auto ens = run_ima(ds, det, {1, 0.5, 3});
  ASSERT_EQ(ens.size(), 1u);
  EXPECT_DOUBLE_EQ(ens.iterations[0].error, 0.25);
  EXPECT_NEAR(ens.members[0].alpha, std::log(3.0) + std::log(2.0), 1e-15);
  EXPECT_EQ(ens.iterations[0].indicators, (std::vector<int>{0, 0, 1, 0}));
  EXPECT_NO_THROW(ens.final_weights.validate());
}

TEST(RunIma, TwoObjectTrace) {
  const auto ds = one_object_per_image(2, 3, 2);
  OracleDetectorSpec spec;
  spec.miss_schedule = {{1}};
  OracleDetector det(spec);
  const auto ens = run_ima(ds, det, {2, 0.5, 3});
  EXPECT_NEAR(ens.iterations[0].error, 0.5, 1e-12);
  EXPECT_NEAR(ens.iterations[0].alpha, std::log(2.0), 1e-12);
  EXPECT_NEAR(ens.iterations[1].weights.weights[0], 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(ens.iterations[1].weights.weights[1], 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(ens.iterations[1].error, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(ens.iterations[1].alpha, std::log(4.0), 1e-12);
}

TEST(RunIma, HookSeesEachIteration) {
  const auto ds = one_object_per_image(5, 2, 3);
  OracleDetectorSpec spec;
  spec.detect_probability = 0.7;
  OracleDetector det(spec);
  std::vector<int> seen;
  run_ima(ds, det, {3, 0.5, 2}, [&](int m, const IMAEnsemble& e, IterationRecord& r) {
    seen.push_back(m);
    EXPECT_EQ(e.size(), static_cast<std::size_t>(m));
    r.single_score = 1.0;
  });
  EXPECT_EQ(seen, (std::vector<int>{1, 2, 3}));
}

TEST(RunIma, DetectorFailureNamesIteration) {
  struct Failing : Detector {
    ModelPtr fit(const SyntheticDataset&, std::span<const double>, const FitContext& ctx) override {
      if (ctx.iteration == 2) throw std::runtime_error("boom");
      return std::make_shared<OracleModel>(OracleDetectorSpec{}, ctx.iteration, 0, std::vector<double>{});
    }
  } det;
  const auto ds = one_object_per_image(3, 2, 4);
  try {
    run_ima(ds, det, {3, 0.5, 2});
    FAIL();
  } catch (const BoostingError& e) {
    EXPECT_EQ(e.iteration(), 2);
    EXPECT_NE(std::string(e.what()).find("boom"), std::string::npos);
  }
}

TEST(Manifest, RoundTrip) {
  const auto ds = one_object_per_image(6, 3, 5);
  OracleDetectorSpec spec;
  spec.detect_probability = 0.6;
  spec.false_positives_per_image = 1;
  OracleDetector det(spec);
  auto ens = run_ima(ds, det, {3, 0.5, 3});
  ens.nms = {0.4, 0.05};
  const auto dir = std::filesystem::temp_directory_path() / "imaboost_test_manifest";
  std::filesystem::remove_all(dir);
  save_ensemble(ens, dir);
  const auto back = load_ensemble(dir);
  ASSERT_EQ(back.size(), ens.size());
  for (std::size_t m = 0; m < ens.size(); ++m) EXPECT_EQ(back.members[m].alpha, ens.members[m].alpha);
  EXPECT_EQ(back.nms.iou_threshold, 0.4);
  EXPECT_EQ(back.num_classes, 3);
  EXPECT_EQ(back.final_weights, ens.final_weights);
  EXPECT_EQ(fuse(back, ds, back.nms), fuse(ens, ds, ens.nms));

  std::filesystem::remove(dir / "model_2.json");
  EXPECT_THROW(load_ensemble(dir), std::runtime_error);
  std::filesystem::remove_all(dir);
}
