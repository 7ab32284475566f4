#pragma once

#include "cpnkit/eval.hpp"
#include "cpnkit/image.hpp"
#include "cpnkit/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cpnkit {

struct SyntheticSpec {
  int image_width = 320;
  int image_height = 240;
  int min_persons = 1;
  int max_persons = 3;
  double min_person_height = 80;  // px, head top to feet
  double max_person_height = 160;
  double max_tilt_deg = 20;
  bool allow_occlusion = true;  // false: person boxes never overlap
  double box_jitter = 0.05;     // fraction of box extent
  double score_noise = 0.1;
  double duplicate_rate = 0.5;  // chance of a second, lower-scored box per person
  int clutter_boxes = 3;        // non-person boxes per scene

  void validate() const;
};

/// One drawn limb; endpoints are the annotated keypoint positions.
struct LimbSegment {
  int person = 0;
  int from = 0, to = 0;
  Eigen::Vector2d a, b;
};

struct SyntheticScene {
  ImageRecord record;
  Image image;
  std::vector<PersonInstance> persons;
  std::vector<DetectionBox> detections;
  std::vector<LimbSegment> limbs;
};

/// Stick figures facing the camera on a textured background. Later persons
/// are drawn over earlier ones; a keypoint covered by another person is v=1,
/// outside the frame v=0 (position zeroed). Person area is its box area.
/// Deterministic in (n, spec, seed).
std::vector<SyntheticScene> generate_synthetic(int n_scenes, const SyntheticSpec& spec, std::uint64_t seed);

/// images/<id>.png, annotations.json (COCO keypoints), detections.json.
void write_synthetic(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes);

struct LoadedDataset {
  KeypointDataset annotations;
  std::vector<Image> images;  // parallel to annotations.images
  std::vector<DetectionBox> detections;
};

/// Reads a directory in the write_synthetic layout; detections.json is optional.
LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace cpnkit
