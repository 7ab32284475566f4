#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>

namespace cpnkit {

inline constexpr int kNumKeypoints = 17;
inline constexpr int kPersonCategory = 1;

// COCO keypoint order.
inline constexpr std::array<std::string_view, kNumKeypoints> kKeypointNames = {
    "nose",          "left_eye",       "right_eye",  "left_ear",    "right_ear",   "left_shoulder",
    "right_shoulder", "left_elbow",    "right_elbow", "left_wrist", "right_wrist", "left_hip",
    "right_hip",     "left_knee",      "right_knee", "left_ankle",  "right_ankle"};

/// Channel index of the mirrored joint (left <-> right, nose fixed).
inline constexpr std::array<int, kNumKeypoints> kFlipIndex = {0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11, 14, 13, 16, 15};

/// Per-keypoint OKS falloff constants (published COCO sigmas).
inline constexpr std::array<double, kNumKeypoints> kOksSigmas = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079,
                                                                 0.079, 0.072, 0.072, 0.062, 0.062, 0.107,
                                                                 0.107, 0.087, 0.087, 0.089, 0.089};

inline constexpr std::array<std::pair<int, int>, 19> kSkeleton = {{{15, 13},
                                                                   {13, 11},
                                                                   {16, 14},
                                                                   {14, 12},
                                                                   {11, 12},
                                                                   {5, 11},
                                                                   {6, 12},
                                                                   {5, 6},
                                                                   {5, 7},
                                                                   {6, 8},
                                                                   {7, 9},
                                                                   {8, 10},
                                                                   {1, 2},
                                                                   {0, 1},
                                                                   {0, 2},
                                                                   {1, 3},
                                                                   {2, 4},
                                                                   {3, 5},
                                                                   {4, 6}}};

struct Box {
  double x = 0, y = 0, w = 0, h = 0;

  double area() const { return w * h; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
};

struct DetectionBox {
  std::int64_t image_id = 0;
  int class_id = kPersonCategory;
  Box box;
  double score = 0;
};

/// v: 0 unlabeled, 1 labeled but occluded, 2 visible.
struct Keypoint {
  double x = 0, y = 0;
  int v = 0;
};

struct PersonInstance {
  std::int64_t image_id = 0;
  std::optional<std::int64_t> id;
  std::array<Keypoint, kNumKeypoints> keypoints{};
  Box bbox;
  double area = 0;
  double score = 1.0;  // instance score for predictions

  int labeled_count() const {
    int n = 0;
    for (const auto& k : keypoints) n += k.v > 0;
    return n;
  }
};

}  // namespace cpnkit
