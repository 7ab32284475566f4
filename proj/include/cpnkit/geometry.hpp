#pragma once

#include "cpnkit/grid.hpp"
#include "cpnkit/types.hpp"

#include <Eigen/Core>

#include <span>
#include <vector>

namespace cpnkit {

struct CropSpec {
  Index target_height = 256;
  Index target_width = 192;

  double aspect() const { return static_cast<double>(target_height) / static_cast<double>(target_width); }
};

/// Augmentation parameters; sampling them is the caller's job.
struct AugmentParams {
  bool flip = false;
  double rotation_deg = 0.0;  // [-45, 45]
  double scale = 1.0;         // [0.7, 1.35]

  static constexpr double kMaxRotationDeg = 45.0;
  static constexpr double kMinScale = 0.7;
  static constexpr double kMaxScale = 1.35;
};

/// 2x3 affine map taking source-image coordinates to crop coordinates.
class AffineMap {
 public:
  using Matrix = Eigen::Matrix<double, 2, 3>;

  AffineMap() : m_(Matrix::Identity()) {}
  explicit AffineMap(const Matrix& m) : m_(m) {}

  static AffineMap identity() { return AffineMap(); }
  static AffineMap translation(double tx, double ty);

  const Matrix& matrix() const { return m_; }
  Eigen::Matrix2d linear() const { return m_.leftCols<2>(); }
  Eigen::Vector2d offset() const { return m_.col(2); }
  double determinant() const { return linear().determinant(); }
  bool invertible() const;

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return linear() * p + offset(); }

  /// (*this) after `first`: p -> this(first(p)).
  AffineMap after(const AffineMap& first) const;

 private:
  Matrix m_;
};

AffineMap invert(const AffineMap& map);

/// Grows one side of `box` about its centre until h:w matches the crop spec.
Box extend_box(const Box& box, const CropSpec& spec);
DetectionBox extend_box(const DetectionBox& box, const CropSpec& spec);

/// Scale and rotation about the box centre, then box -> target rectangle,
/// then an optional mirror of the crop.
AffineMap build_crop_transform(const Box& box, const CropSpec& spec, const AugmentParams& aug = {});

std::vector<Eigen::Vector2d> warp_points(std::span<const Eigen::Vector2d> points, const AffineMap& map);

/// Bilinear resampling of every channel; samples outside the source are zero.
template <typename Scalar>
Grid<Scalar> warp_image(const Grid<Scalar>& image, const AffineMap& map, Index out_height, Index out_width);

/// Horizontal mirror of an annotation in an image of the given width
/// (x -> width - 1 - x) with left/right joints exchanged.
PersonInstance flip_keypoints(const PersonInstance& instance, double width);

/// Mirrors columns of a C x H x W or N x C x H x W grid.
template <typename Scalar>
Grid<Scalar> flip_horizontal(const Grid<Scalar>& image);

}  // namespace cpnkit
