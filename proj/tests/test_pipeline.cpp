#include "cpnkit/optim.hpp"
#include "cpnkit/pipeline.hpp"
#include "support/primitive_checks.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <limits>

using namespace cpnkit;
using namespace cpnkit::testing;
namespace fs = std::filesystem;

namespace {

ParamStore<double> single_vector(std::initializer_list<double> values) {
  ParamStore<double> s;
  auto& w = s.add("w", {static_cast<Index>(values.size())});
  Index i = 0;
  for (double v : values) w[i++] = v;
  return s;
}

ExperimentConfig tiny_experiment(std::int64_t steps) {
  ExperimentConfig c;
  c.model = toy_check_config(true, LossKind::kPlain, LossKind::kOhkm);
  c.train.batch_size = 2;
  c.train.max_steps = steps;
  c.train.learning_rate = 1e-3;
  return c;
}

const std::vector<SyntheticScene>& scenes() {
  static const std::vector<SyntheticScene> s = [] {
    SyntheticSpec spec;
    spec.image_width = 160;
    spec.image_height = 120;
    spec.min_person_height = 50;
    spec.max_person_height = 90;
    return generate_synthetic(3, spec, 21);
  }();
  return s;
}

TrainingSet training_set() {
  TrainingSet set;
  for (const auto& sc : scenes()) {
    set.images.push_back(sc.image);
    for (const auto& p : sc.persons) {
      if (p.labeled_count() > 0) set.items.push_back({set.images.size() - 1, p});
    }
  }
  return set;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "cpnkit_pipeline_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Adam, ZeroGradientAndNoDecayLeavesParameters) {
  ParamStore<double> s = single_vector({1.0, -2.0, 0.5});
  s.at("w").set_grad(Grid<double>::Array::Zero(3));
  TrainConfig tc;
  tc.weight_decay = 0;
  const auto before = s.at("w").data();
  ASSERT_TRUE(adam_step(s, tc, 0).applied);
  EXPECT_TRUE((s.at("w").data() == before).all());
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  ParamStore<double> s = single_vector({1.0, -2.0, 0.5});
  Grid<double>::Array g(3);
  g << 0.3, -4.0, 1e-3;
  s.at("w").set_grad(g);
  TrainConfig tc;
  tc.weight_decay = 0;
  tc.learning_rate = 0.01;
  adam_step(s, tc, 0);
  // bias-corrected moments are g and g^2 after one step
  const double want[3] = {1.0 - 0.01 * 0.3 / (0.3 + 1e-8), -2.0 + 0.01 * 4.0 / (4.0 + 1e-8),
                          0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8)};
  for (Index i = 0; i < 3; ++i) EXPECT_NEAR(s.at("w")[i], want[i], 1e-14);
}

TEST(Adam, QuadraticTrajectoryMatchesReferenceUpdater) {
  const double c[2] = {0.7, -1.3};
  ParamStore<double> s = single_vector({2.0, 1.0});
  TrainConfig tc;
  tc.learning_rate = 0.05;
  tc.weight_decay = 1e-2;
  tc.lr_decay_interval = 4;

  double w[2] = {2.0, 1.0}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int step = 0; step < 10; ++step) {
    Grid<double>::Array g(2);
    for (int i = 0; i < 2; ++i) g[i] = s.at("w")[i] - c[i];
    s.at("w").set_grad(g);
    ASSERT_TRUE(adam_step(s, tc, step).applied);

    const double lr = 0.05 / std::pow(2.0, step / 4);
    for (int i = 0; i < 2; ++i) {
      const double grad = w[i] - c[i];
      w[i] *= 1 - lr * 1e-2;
      m[i] = 0.9 * m[i] + 0.1 * grad;
      v[i] = 0.999 * v[i] + 0.001 * grad * grad;
      const double mh = m[i] / (1 - std::pow(0.9, step + 1)), vh = v[i] / (1 - std::pow(0.999, step + 1));
      w[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(s.at("w")[i], w[i], 1e-7);
}

TEST(Adam, NonFiniteGradientRejectsWholeStep) {
  ParamStore<double> s = single_vector({1.0, 2.0});
  s.add("b", {1})[0] = 3.0;
  s.at("w").set_grad(Grid<double>::Array::Ones(2));
  Grid<double>::Array bad(1);
  bad[0] = std::numeric_limits<double>::quiet_NaN();
  s.at("b").set_grad(bad);
  const StepReport r = adam_step(s, TrainConfig{}, 0);
  EXPECT_FALSE(r.applied);
  EXPECT_EQ(r.rejected_by, "b");
  EXPECT_EQ(s.at("w")[0], 1.0);
  EXPECT_EQ(s.at("b")[0], 3.0);
  EXPECT_TRUE((s.entry("w").first_moment == 0.0).all());
}

TEST(LearningRate, HalvesEveryInterval) {
  TrainConfig tc;
  tc.learning_rate = 0.008;
  tc.lr_decay_interval = 100;
  EXPECT_EQ(tc.learning_rate_at(0), 0.008);
  EXPECT_EQ(tc.learning_rate_at(99), 0.008);
  EXPECT_EQ(tc.learning_rate_at(100), 0.004);
  EXPECT_EQ(tc.learning_rate_at(250), 0.002);
}

TEST(Config, RejectsUnknownKeysAndRoundTrips) {
  EXPECT_THROW(parse_experiment_config("learning_rat = 0.1\n"), std::invalid_argument);
  EXPECT_THROW(parse_model_config("max_steps = 3\n"), std::invalid_argument);
  ExperimentConfig c = tiny_experiment(17);
  c.train.augment = false;
  c.model.loss.refine_loss = LossKind::kPlain;
  const std::string text = to_text(c.model) + to_text(c.train);
  const ExperimentConfig back = parse_experiment_config(text);
  EXPECT_EQ(to_text(back.model) + to_text(back.train), text);
  EXPECT_EQ(back.train.max_steps, 17);
  EXPECT_EQ(back.model.refine_blocks, c.model.refine_blocks);
}

TEST(Config, RejectsOutOfRangeAugmentation) {
  EXPECT_THROW(parse_experiment_config("max_rotation_deg = 50\n"), std::invalid_argument);
  EXPECT_THROW(parse_experiment_config("min_scale = 0.5\n"), std::invalid_argument);
}

TEST(Synthetic, DeterministicInSeed) {
  SyntheticSpec spec;
  const auto a = generate_synthetic(2, spec, 5), b = generate_synthetic(2, spec, 5);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE((a[i].image.data() == b[i].image.data()).all());
    ASSERT_EQ(a[i].persons.size(), b[i].persons.size());
    for (std::size_t p = 0; p < a[i].persons.size(); ++p) {
      for (int k = 0; k < kNumKeypoints; ++k) EXPECT_EQ(a[i].persons[p].keypoints[k].x, b[i].persons[p].keypoints[k].x);
    }
  }
}

TEST(Synthetic, WithoutOcclusionInFrameKeypointsAreVisible) {
  SyntheticSpec spec;
  spec.allow_occlusion = false;
  for (const auto& sc : generate_synthetic(5, spec, 9)) {
    for (const auto& p : sc.persons) {
      for (const auto& k : p.keypoints) {
        if (k.v == 0) continue;
        EXPECT_EQ(k.v, 2);
        EXPECT_GE(k.x, 0);
        EXPECT_LE(k.x, spec.image_width);
      }
    }
  }
}

TEST(Synthetic, LimbEndpointsAreKeypoints) {
  for (const auto& sc : scenes()) {
    ASSERT_FALSE(sc.limbs.empty());
    for (const auto& l : sc.limbs) {
      const auto& p = sc.persons[static_cast<std::size_t>(l.person)];
      const Keypoint& a = p.keypoints[static_cast<std::size_t>(l.from)];
      const Keypoint& b = p.keypoints[static_cast<std::size_t>(l.to)];
      if (a.v > 0) {
        EXPECT_DOUBLE_EQ(l.a.x(), a.x);
        EXPECT_DOUBLE_EQ(l.a.y(), a.y);
      }
      if (b.v > 0) {
        EXPECT_DOUBLE_EQ(l.b.x(), b.x);
        EXPECT_DOUBLE_EQ(l.b.y(), b.y);
      }
    }
  }
}

TEST(CropSample, MirroredSampleSwapsLabelsAndMirrorsPeaks) {
  const ModelConfig mc = toy_check_config(true, LossKind::kPlain, LossKind::kOhkm);
  const TrainingSet data = training_set();
  ASSERT_FALSE(data.items.empty());
  const TrainItem& item = data.items[0];
  AugmentParams flip;
  flip.flip = true;
  const CropSample plain = make_crop_sample(data.images[item.image], item.instance, mc, {});
  const CropSample mirrored = make_crop_sample(data.images[item.image], item.instance, mc, flip);
  const Index w = plain.targets.shape().back();
  for (int k = 0; k < kNumKeypoints; ++k) {
    const int src = kFlipIndex[static_cast<std::size_t>(k)];
    ASSERT_EQ(mirrored.annotated[k], plain.annotated[src]);
    if (!plain.annotated[src]) continue;
    const PeakLocation a = top_two(plain.targets, src)[0];
    const PeakLocation b = top_two(mirrored.targets, k)[0];
    EXPECT_EQ(a.row, b.row) << k;
    EXPECT_LE(std::abs((w - 1 - a.col) - b.col), 1) << k;
  }
}

TEST(Train, ZeroStepsReturnsInitialParameters) {
  const ExperimentConfig c = tiny_experiment(0);
  const TrainResult r = train(c, training_set());
  const auto init = Cpn<float>(c.model).init_params(c.train.seed);
  ASSERT_EQ(r.params.entries().size(), init.entries().size());
  for (std::size_t i = 0; i < init.entries().size(); ++i) {
    EXPECT_TRUE((r.params.entries()[i].value.data() == init.entries()[i].value.data()).all());
  }
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, RepeatRunsAreIdenticalAndLossIsPositive) {
  const ExperimentConfig c = tiny_experiment(3);
  const TrainResult a = train(c, training_set()), b = train(c, training_set());
  ASSERT_FALSE(a.diverged) << a.message;
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_GT(a.log[0].loss.total, 0.0);
  for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(log_line(a.log[i]), log_line(b.log[i]));
  for (std::size_t i = 0; i < a.params.entries().size(); ++i) {
    EXPECT_TRUE((a.params.entries()[i].value.data() == b.params.entries()[i].value.data()).all());
  }
}

TEST(Train, RejectsEmptyTrainingSet) {
  EXPECT_THROW(train(tiny_experiment(1), TrainingSet{}), std::invalid_argument);
}

TEST(Model, SaveLoadRoundTrip) {
  ExperimentConfig c = tiny_experiment(5);
  const auto params = Cpn<float>(c.model).init_params(4);
  const fs::path dir = scratch("model");
  save_model(dir, c, params);
  const LoadedModel m = load_model(dir);
  EXPECT_EQ(to_text(m.config.model), to_text(c.model));
  EXPECT_EQ(m.config.train.max_steps, 5);
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    EXPECT_TRUE((m.params.entries()[i].value.data() == params.entries()[i].value.data()).all());
  }
}

class InferTest : public ::testing::Test {
 protected:
  ModelConfig mc = toy_check_config(true, LossKind::kPlain, LossKind::kOhkm);
  Cpn<float> net{mc};
  ParamStore<float> params = net.init_params(3);
  std::map<std::int64_t, Image> images{{0, scenes()[0].image}};
  DetectionBox box() const {
    DetectionBox d;
    d.image_id = 0;
    d.class_id = kPersonCategory;
    d.box = scenes()[0].persons[0].bbox;
    d.score = 0.8;
    return d;
  }
};

TEST_F(InferTest, FlipDoublesForwardsAndFlopsMatchClosedForm) {
  InferOptions opts;
  const InferReport with = infer(net, params, images, {box()}, opts);
  opts.flip = false;
  opts.smooth = false;
  const InferReport without = infer(net, params, images, {box()}, opts);
  EXPECT_EQ(with.forwards, 2u);
  EXPECT_EQ(without.forwards, 1u);
  EXPECT_EQ(with.flops_per_forward(), static_cast<double>(count_flops(mc, mc.crop_height, mc.crop_width)));
  ASSERT_EQ(with.results.size(), 1u);
  ASSERT_EQ(without.results.size(), 1u);
  EXPECT_LE(with.results[0].score, 0.8);
}

TEST_F(InferTest, IdenticalBoxesGiveIdenticalPoses) {
  const InferReport r = infer(net, params, images, {box(), box()});
  ASSERT_EQ(r.results.size(), 2u);
  for (int k = 0; k < kNumKeypoints; ++k) {
    EXPECT_EQ(r.results[0].keypoints[k].x, r.results[1].keypoints[k].x);
    EXPECT_EQ(r.results[0].keypoints[k].y, r.results[1].keypoints[k].y);
  }
  EXPECT_EQ(r.results[0].score, r.results[1].score);
}

TEST_F(InferTest, MissingImageAndOutsideBoxAreSkippedWithWarnings) {
  DetectionBox missing = box();
  missing.image_id = 42;
  DetectionBox outside = box();
  outside.box = {1e4, 1e4, 20, 40};
  const InferReport r = infer(net, params, images, {missing, outside, box()});
  EXPECT_EQ(r.results.size(), 1u);
  EXPECT_EQ(r.warnings.size(), 2u);
}
