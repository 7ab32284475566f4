#pragma once

#include "cpnkit/geometry.hpp"
#include "cpnkit/grid.hpp"
#include "cpnkit/types.hpp"

#include <Eigen/Core>

#include <array>
#include <vector>

namespace cpnkit {

using KeypointMask = std::vector<bool>;

/// K x H x W score maps at `output_stride` relative to the crop.
///
/// Heatmap cell j is centred on crop pixel stride*j + (stride-1)/2, which makes
/// a column reversal of the crop a column reversal of the heatmap.
template <typename Scalar>
struct HeatmapStack {
  Grid<Scalar> maps;
  Index output_stride = 4;

  Index keypoints() const { return maps.channels(); }
  Index height() const { return maps.height(); }
  Index width() const { return maps.width(); }
};

struct HeatmapSpec {
  Index num_keypoints = kNumKeypoints;
  Index height = 64;
  Index width = 48;
  Index output_stride = 4;
  double sigma = 2.0;  // target gaussian std in heatmap cells

  /// Heatmap geometry for a crop; the crop must divide by the stride.
  static HeatmapSpec for_crop(const CropSpec& crop, Index output_stride = 4, double sigma = 2.0);
};

Eigen::Vector2d crop_to_heatmap(const Eigen::Vector2d& p, Index output_stride);
Eigen::Vector2d heatmap_to_crop(const Eigen::Vector2d& p, Index output_stride);

template <typename Scalar>
struct EncodedTarget {
  HeatmapStack<Scalar> stack;
  KeypointMask annotated;  // false for v=0 or keypoints landing off the map
};

/// Renders each labelled keypoint as an unnormalised gaussian (peak 1 at the
/// sub-cell keypoint location) truncated at 3 sigma.
template <typename Scalar>
EncodedTarget<Scalar> encode_target(const PersonInstance& instance, const AffineMap& crop_map,
                                    const HeatmapSpec& spec);

/// Separable normalised gaussian blur, radius ceil(2 sigma), edge-clamped.
template <typename Scalar>
HeatmapStack<Scalar> smooth(const HeatmapStack<Scalar>& stack, double sigma);

/// Averages a prediction with the prediction for the mirrored crop after
/// un-mirroring it and swapping left/right channels.
template <typename Scalar>
HeatmapStack<Scalar> flip_average(const HeatmapStack<Scalar>& stack, const HeatmapStack<Scalar>& flipped);

/// Mirrors columns and swaps left/right channels of a stack.
template <typename Scalar>
HeatmapStack<Scalar> unflip(const HeatmapStack<Scalar>& flipped);

struct PoseKeypoint {
  double x = 0, y = 0;
  double score = 0;
};

struct PoseResult {
  std::array<PoseKeypoint, kNumKeypoints> keypoints{};
  double box_score = 0;
  double instance_score = 0;  // box_score * mean keypoint score

  /// As a prediction record: every keypoint v=1, score = instance_score.
  PersonInstance to_instance(std::int64_t image_id) const;
};

struct PeakLocation {
  Index row = 0, col = 0;
  double value = 0;
};

/// Highest cell and second-highest other cell of one channel; ties resolve to
/// the lowest row, then lowest column.
template <typename Scalar>
std::array<PeakLocation, 2> top_two(const Grid<Scalar>& maps, Index channel);

/// Sub-cell location in heatmap coordinates: the best cell moved a quarter
/// cell toward the runner-up. No shift when the runner-up is non-positive or
/// ties the best.
template <typename Scalar>
Eigen::Vector2d quarter_offset_peak(const Grid<Scalar>& maps, Index channel, double* score = nullptr);

template <typename Scalar>
PoseResult decode(const HeatmapStack<Scalar>& stack, const AffineMap& crop_map, double box_score);

/// instance_score = box_score * mean(keypoint scores), summed in index order.
double rescore(const std::array<PoseKeypoint, kNumKeypoints>& keypoints, double box_score);

}  // namespace cpnkit
