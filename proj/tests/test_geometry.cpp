#include "cpnkit/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace cpnkit;

namespace {

const CropSpec kCrop{256, 192};

PersonInstance random_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 300);
  std::uniform_int_distribution<int> v(0, 2);
  PersonInstance p;
  for (auto& k : p.keypoints) k = {u(rng), u(rng), v(rng)};
  p.bbox = {u(rng), u(rng), 40, 80};
  return p;
}

}  // namespace

TEST(ExtendBox, AlreadyAtRatioIsUnchanged) {
  const Box b = extend_box(Box{0, 0, 96, 128}, kCrop);
  EXPECT_DOUBLE_EQ(b.x, 0);
  EXPECT_DOUBLE_EQ(b.y, 0);
  EXPECT_DOUBLE_EQ(b.w, 96);
  EXPECT_DOUBLE_EQ(b.h, 128);
}

TEST(ExtendBox, SquareGrowsInHeight) {
  const Box b = extend_box(Box{0, 0, 100, 100}, kCrop);
  EXPECT_DOUBLE_EQ(b.center_x(), 50);
  EXPECT_DOUBLE_EQ(b.center_y(), 50);
  EXPECT_DOUBLE_EQ(b.w, 100);
  EXPECT_NEAR(b.h, 400.0 / 3.0, 1e-9);
}

TEST(ExtendBox, WideBoxGrowsToFourHundred) {
  const Box in{10, 20, 300, 100};
  const Box b = extend_box(in, kCrop);
  EXPECT_DOUBLE_EQ(b.center_x(), in.center_x());
  EXPECT_DOUBLE_EQ(b.center_y(), in.center_y());
  EXPECT_DOUBLE_EQ(b.h, 400);
  EXPECT_DOUBLE_EQ(b.w, 300);
}

TEST(ExtendBox, RejectsDegenerateBox) {
  EXPECT_THROW(extend_box(Box{0, 0, 0, 10}, kCrop), std::invalid_argument);
}

TEST(ExtendBox, PropertiesOverRandomBoxes) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> pos(-50, 50), size(1, 400);
  for (int trial = 0; trial < 1000; ++trial) {
    const Box in{pos(rng), pos(rng), size(rng), size(rng)};
    const Box out = extend_box(in, kCrop);
    EXPECT_NEAR(out.h / out.w, kCrop.aspect(), 1e-6);
    EXPECT_NEAR(out.center_x(), in.center_x(), 1e-9);
    EXPECT_NEAR(out.center_y(), in.center_y(), 1e-9);
    EXPECT_GE(out.w, in.w - 1e-9);
    EXPECT_GE(out.h, in.h - 1e-9);
    EXPECT_TRUE(out.w == in.w || out.h == in.h);
    const Box again = extend_box(out, kCrop);
    EXPECT_NEAR(again.w, out.w, 1e-9);
    EXPECT_NEAR(again.h, out.h, 1e-9);
  }
}

TEST(CropTransform, IdentityAugMapsBoxCorners) {
  const AffineMap m = build_crop_transform(Box{0, 0, 192, 256}, kCrop);
  EXPECT_TRUE(m.apply({0, 0}).isApprox(Eigen::Vector2d(0, 0)));
  EXPECT_TRUE(m.apply({192, 256}).isApprox(Eigen::Vector2d(192, 256)));
}

TEST(CropTransform, FlipMirrorsBoxRelativePosition) {
  const Box box{40, 10, 96, 128};
  AugmentParams aug;
  aug.flip = true;
  const AffineMap m = build_crop_transform(box, kCrop, aug);
  const Eigen::Vector2d p = m.apply({box.x + 0.25 * box.w, box.y + 0.5 * box.h});
  EXPECT_NEAR(p.x(), 0.75 * 192, 1e-9);
  EXPECT_NEAR(p.y(), 128, 1e-9);
}

TEST(CropTransform, RejectsOutOfRangeAugmentation) {
  AugmentParams aug;
  aug.rotation_deg = 90;
  EXPECT_THROW(build_crop_transform(Box{0, 0, 96, 128}, kCrop, aug), std::invalid_argument);
  aug.rotation_deg = 0;
  aug.scale = 1.5;
  EXPECT_THROW(build_crop_transform(Box{0, 0, 96, 128}, kCrop, aug), std::invalid_argument);
}

TEST(CropTransform, IdentityAugEqualsPlainCropExactly) {
  const Box box{13.5, -4, 77, 102.66};
  AugmentParams aug;
  aug.rotation_deg = 0;
  aug.scale = 1;
  EXPECT_TRUE(build_crop_transform(box, kCrop, aug).matrix() == build_crop_transform(box, kCrop).matrix());
}

TEST(CropTransform, ScaleAndRotationKeepBoxCentreFixed) {
  const Box box{20, 30, 96, 128};
  AugmentParams aug;
  aug.rotation_deg = 30;
  aug.scale = 1.3;
  const AffineMap m = build_crop_transform(box, kCrop, aug);
  EXPECT_TRUE(m.apply({box.center_x(), box.center_y()}).isApprox(Eigen::Vector2d(96, 128), 1e-12));
}

TEST(Warp, TranslationMovesPoint) {
  const std::vector<Eigen::Vector2d> p{{5, 5}};
  EXPECT_TRUE(warp_points(p, AffineMap::translation(3, 0))[0].isApprox(Eigen::Vector2d(8, 5)));
}

TEST(Warp, IdentityLeavesImageUnchanged) {
  Grid<double> img({3, 4, 5});
  for (Index i = 0; i < img.size(); ++i) img[i] = 0.1 * static_cast<double>(i);
  const Grid<double> out = warp_image(img, AffineMap::identity(), 4, 5);
  EXPECT_TRUE((out.data() == img.data()).all());
}

TEST(Warp, OutsideSourceIsZero) {
  Grid<double> img({1, 2, 2});
  img.data().setOnes();
  const Grid<double> out = warp_image(img, AffineMap::translation(10, 0), 2, 2);
  EXPECT_TRUE((out.data() == 0.0).all());
}

TEST(Warp, BilinearMidpoint) {
  Grid<double> img({1, 1, 2});
  img[0] = 2;
  img[1] = 4;
  const Grid<double> out = warp_image(img, AffineMap::translation(-0.5, 0), 1, 1);
  EXPECT_DOUBLE_EQ(out[0], 3);
}

TEST(Warp, SingularMapRejected) {
  AffineMap::Matrix m = AffineMap::Matrix::Zero();
  EXPECT_THROW(invert(AffineMap(m)), std::invalid_argument);
}

TEST(Warp, RoundTripOverRandomMaps) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> box_pos(-100, 300), box_size(10, 300), rot(-45, 45), scale(0.7, 1.35),
      pt(-500, 500);
  std::bernoulli_distribution flip(0.5);
  for (int trial = 0; trial < 500; ++trial) {
    const Box box = extend_box(Box{box_pos(rng), box_pos(rng), box_size(rng), box_size(rng)}, kCrop);
    const AugmentParams aug{flip(rng), rot(rng), scale(rng)};
    const AffineMap m = build_crop_transform(box, kCrop, aug);
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(pt(rng), pt(rng));
    const auto back = warp_points(warp_points(pts, m), invert(m));
    for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_LT((back[i] - pts[i]).cwiseAbs().maxCoeff(), 1e-4);
  }
}

TEST(FlipKeypoints, LeftWristBecomesRightWrist) {
  PersonInstance p;
  p.keypoints[9] = {10, 50, 2};
  const PersonInstance f = flip_keypoints(p, 192);
  EXPECT_DOUBLE_EQ(f.keypoints[10].x, 181);
  EXPECT_DOUBLE_EQ(f.keypoints[10].y, 50);
  EXPECT_EQ(f.keypoints[10].v, 2);
}

TEST(FlipKeypoints, NoseKeepsChannel) {
  PersonInstance p;
  p.keypoints[0] = {20, 5, 1};
  const PersonInstance f = flip_keypoints(p, 100);
  EXPECT_DOUBLE_EQ(f.keypoints[0].x, 79);
  EXPECT_EQ(f.keypoints[0].v, 1);
}

TEST(FlipKeypoints, InvolutionOverRandomInstances) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const PersonInstance p = random_instance(rng);
    const PersonInstance twice = flip_keypoints(flip_keypoints(p, 320), 320);
    for (int k = 0; k < kNumKeypoints; ++k) {
      EXPECT_NEAR(twice.keypoints[k].x, p.keypoints[k].x, 1e-9);
      EXPECT_EQ(twice.keypoints[k].y, p.keypoints[k].y);
      EXPECT_EQ(twice.keypoints[k].v, p.keypoints[k].v);
    }
    EXPECT_NEAR(twice.bbox.x, p.bbox.x, 1e-9);
  }
}

TEST(FlipHorizontal, ReversesColumns) {
  Grid<double> img({1, 2, 3});
  img.data() << 1, 2, 3, 4, 5, 6;
  const Grid<double> f = flip_horizontal(img);
  EXPECT_EQ(f[0], 3);
  EXPECT_EQ(f[5], 4);
}
