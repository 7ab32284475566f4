#include "cpnkit/geometry.hpp"

#include <Eigen/LU>

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace cpnkit {

namespace {

constexpr double kMinDeterminant = 1e-9;

AffineMap from_linear(const Eigen::Matrix2d& a, const Eigen::Vector2d& t) {
  AffineMap::Matrix m;
  m.leftCols<2>() = a;
  m.col(2) = t;
  return AffineMap(m);
}

// Linear map `a` applied about `center`.
AffineMap about(const Eigen::Matrix2d& a, const Eigen::Vector2d& center) {
  return from_linear(a, center - a * center);
}

}  // namespace

AffineMap AffineMap::translation(double tx, double ty) {
  return from_linear(Eigen::Matrix2d::Identity(), Eigen::Vector2d(tx, ty));
}

bool AffineMap::invertible() const { return std::abs(determinant()) > kMinDeterminant; }

AffineMap AffineMap::after(const AffineMap& first) const {
  return from_linear(linear() * first.linear(), linear() * first.offset() + offset());
}

AffineMap invert(const AffineMap& map) {
  if (!map.invertible()) {
    throw std::invalid_argument("invert: singular affine map (det " + std::to_string(map.determinant()) + ")");
  }
  const Eigen::Matrix2d inv = map.linear().inverse();
  return from_linear(inv, -inv * map.offset());
}

Box extend_box(const Box& box, const CropSpec& spec) {
  if (!(box.w > 0) || !(box.h > 0)) {
    throw std::invalid_argument("extend_box: degenerate box " + std::to_string(box.w) + "x" + std::to_string(box.h));
  }
  if (spec.target_height <= 0 || spec.target_width <= 0) throw std::invalid_argument("extend_box: bad crop spec");
  const double ratio = spec.aspect();
  Box out = box;
  if (box.h > ratio * box.w) {
    out.w = box.h / ratio;
  } else if (box.h < ratio * box.w) {
    out.h = box.w * ratio;
  }
  out.x = box.center_x() - 0.5 * out.w;
  out.y = box.center_y() - 0.5 * out.h;
  return out;
}

DetectionBox extend_box(const DetectionBox& box, const CropSpec& spec) {
  DetectionBox out = box;
  out.box = extend_box(box.box, spec);
  return out;
}

AffineMap build_crop_transform(const Box& box, const CropSpec& spec, const AugmentParams& aug) {
  if (!(box.w > 0) || !(box.h > 0)) throw std::invalid_argument("build_crop_transform: degenerate box");
  if (!(std::abs(aug.rotation_deg) <= AugmentParams::kMaxRotationDeg)) {
    throw std::invalid_argument("build_crop_transform: rotation " + std::to_string(aug.rotation_deg) +
                                " deg outside [-45, 45]");
  }
  if (!(aug.scale >= AugmentParams::kMinScale && aug.scale <= AugmentParams::kMaxScale)) {
    throw std::invalid_argument("build_crop_transform: scale " + std::to_string(aug.scale) +
                                " outside [0.7, 1.35]");
  }
  const Eigen::Vector2d center(box.center_x(), box.center_y());
  const double theta = aug.rotation_deg * std::numbers::pi / 180.0;
  Eigen::Matrix2d rotation;
  rotation << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);

  const AffineMap scale = about(aug.scale * Eigen::Matrix2d::Identity(), center);
  const AffineMap rotate = about(rotation, center);
  const double sx = static_cast<double>(spec.target_width) / box.w;
  const double sy = static_cast<double>(spec.target_height) / box.h;
  const AffineMap to_crop = from_linear(Eigen::Vector2d(sx, sy).asDiagonal(), Eigen::Vector2d(-sx * box.x, -sy * box.y));

  AffineMap map = to_crop.after(rotate.after(scale));
  if (aug.flip) {
    const AffineMap mirror =
        from_linear(Eigen::Vector2d(-1.0, 1.0).asDiagonal(), Eigen::Vector2d(static_cast<double>(spec.target_width), 0));
    map = mirror.after(map);
  }
  return map;
}

std::vector<Eigen::Vector2d> warp_points(std::span<const Eigen::Vector2d> points, const AffineMap& map) {
  std::vector<Eigen::Vector2d> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(map.apply(p));
  return out;
}

template <typename Scalar>
Grid<Scalar> warp_image(const Grid<Scalar>& image, const AffineMap& map, Index out_height, Index out_width) {
  if (image.rank() != 3) throw std::invalid_argument("warp_image: expected C x H x W, got " + shape_string(image.shape()));
  if (out_height <= 0 || out_width <= 0) throw std::invalid_argument("warp_image: bad output size");
  const AffineMap back = invert(map);
  const Index c = image.channels(), h = image.height(), w = image.width();
  Grid<Scalar> out({c, out_height, out_width});
  for (Index v = 0; v < out_height; ++v) {
    for (Index u = 0; u < out_width; ++u) {
      const Eigen::Vector2d src = back.apply(Eigen::Vector2d(static_cast<double>(u), static_cast<double>(v)));
      const double fx = std::floor(src.x()), fy = std::floor(src.y());
      const Index x0 = static_cast<Index>(fx), y0 = static_cast<Index>(fy);
      const double ax = src.x() - fx, ay = src.y() - fy;
      if (x0 < -1 || y0 < -1 || x0 >= w || y0 >= h) continue;
      const double weights[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (Index ch = 0; ch < c; ++ch) {
        double acc = 0;
        for (int i = 0; i < 4; ++i) {
          if (weights[i] == 0.0 || xs[i] < 0 || ys[i] < 0 || xs[i] >= w || ys[i] >= h) continue;
          acc += weights[i] * static_cast<double>(image.at(0, ch, ys[i], xs[i]));
        }
        out.at(0, ch, v, u) = static_cast<Scalar>(acc);
      }
    }
  }
  return out;
}

PersonInstance flip_keypoints(const PersonInstance& instance, double width) {
  if (!(width > 0)) throw std::invalid_argument("flip_keypoints: width must be positive");
  PersonInstance out = instance;
  for (int k = 0; k < kNumKeypoints; ++k) {
    Keypoint kp = instance.keypoints[static_cast<std::size_t>(k)];
    kp.x = width - 1.0 - kp.x;
    out.keypoints[static_cast<std::size_t>(kFlipIndex[static_cast<std::size_t>(k)])] = kp;
  }
  out.bbox.x = width - 1.0 - (instance.bbox.x + instance.bbox.w);
  return out;
}

template <typename Scalar>
Grid<Scalar> flip_horizontal(const Grid<Scalar>& image) {
  Grid<Scalar> out(image.shape());
  const Index rows = image.size() / image.width(), w = image.width();
  for (Index r = 0; r < rows; ++r) out.data().segment(r * w, w) = image.data().segment(r * w, w).reverse();
  return out;
}

template Grid<float> warp_image(const Grid<float>&, const AffineMap&, Index, Index);
template Grid<double> warp_image(const Grid<double>&, const AffineMap&, Index, Index);
template Grid<float> flip_horizontal(const Grid<float>&);
template Grid<double> flip_horizontal(const Grid<double>&);

}  // namespace cpnkit
