#pragma once

#include "cpnkit/types.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace cpnkit {

double iou(const Box& a, const Box& b);
inline double iou(const DetectionBox& a, const DetectionBox& b) { return iou(a.box, b.box); }

/// Greedy suppression within one group. Output is ordered by score
/// descending, then input order; scores are untouched.
std::vector<DetectionBox> hard_nms(const std::vector<DetectionBox>& boxes, double iou_threshold);

/// Score multiplier as a function of IoU with the box just kept.
using DecayFn = std::function<double(double)>;

DecayFn gaussian_decay(double sigma);
/// 0 above the threshold, 1 at or below it.
DecayFn step_decay(double iou_threshold);

/// Greedy rescoring within one group: keep the current best, decay the rest,
/// drop anything that falls below `score_floor`. Output is in keep order.
std::vector<DetectionBox> soft_nms(const std::vector<DetectionBox>& boxes, const DecayFn& decay, double score_floor);
std::vector<DetectionBox> soft_nms(const std::vector<DetectionBox>& boxes, double sigma = 0.5,
                                   double score_floor = 0.001);

struct NmsOptions {
  enum class Kind { kNone, kHard, kSoft };
  Kind kind = Kind::kSoft;
  double iou_threshold = 0.5;
  double sigma = 0.5;
  double score_floor = 0.001;
};

/// Applies the chosen suppression independently per (image, class).
/// Groups are emitted in ascending (image_id, class_id) order.
std::vector<DetectionBox> suppress(const std::vector<DetectionBox>& boxes, const NmsOptions& options);

/// Per image: the top `cap` boxes over all classes by score (stable), then
/// only those of `person_class`. Images are emitted in ascending id order.
std::vector<DetectionBox> select_for_pose(const std::vector<DetectionBox>& boxes, int person_class = kPersonCategory,
                                          std::size_t cap = 100);

/// COCO results shape: [{image_id, category_id, bbox: [x, y, w, h], score}].
std::vector<DetectionBox> load_detections(const std::filesystem::path& path);
std::vector<DetectionBox> parse_detections(const std::string& json_text);
std::string detections_to_json(const std::vector<DetectionBox>& boxes);

}  // namespace cpnkit
