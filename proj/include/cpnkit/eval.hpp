#pragma once

#include "cpnkit/types.hpp"

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace cpnkit {

/// COCO object keypoint similarity: mean over gt-labelled keypoints of
/// exp(-d^2 / (2 * area * (2 sigma_i)^2)). Throws if gt has no labelled keypoint.
double oks(const PersonInstance& pred, const PersonInstance& gt,
           const std::array<double, kNumKeypoints>& sigmas = kOksSigmas);

struct AreaRange {
  double lo = 0;
  double hi = 1e18;  // half-open [lo, hi)
  bool contains(double area) const { return area >= lo && area < hi; }
};

inline constexpr AreaRange kAreaAll{0, 1e18};
inline constexpr AreaRange kAreaMedium{32.0 * 32.0, 96.0 * 96.0};
inline constexpr AreaRange kAreaLarge{96.0 * 96.0, 1e18};

struct EvalOptions {
  std::vector<double> thresholds = default_thresholds();
  std::size_t max_detections = 20;  // per image

  static std::vector<double> default_thresholds();  // .50:.05:.95
};

/// Precision/recall at one threshold for one area range. -1 marks an empty
/// bucket (no ground truth in range).
struct ThresholdResult {
  double threshold = 0;
  double precision = -1;  // 101-point interpolated AP
  double recall = -1;
};

struct EvalReport {
  double ap = -1, ap50 = -1, ap75 = -1, ap_medium = -1, ap_large = -1;
  double ar = -1, ar50 = -1, ar75 = -1, ar_medium = -1, ar_large = -1;
  std::vector<ThresholdResult> per_threshold;  // all areas
  std::size_t num_predictions = 0;
  std::size_t num_ground_truth = 0;
};

/// Similarity between prediction p and ground truth g of the same image.
using SimilarityFn = std::function<double(const PersonInstance&, const PersonInstance&)>;

/// Per-threshold results for one area range. Predictions are ranked by score
/// (stable), capped per image; each is greedily matched to the unmatched gt of
/// highest similarity >= t, ties to the lower gt index. Gt outside the range
/// are matchable but ignored, as are unmatched predictions outside the range.
/// Gt with no labelled keypoint are dropped when `keypoint_mode` is set.
std::vector<ThresholdResult> evaluate_range(const std::vector<PersonInstance>& preds,
                                            const std::vector<PersonInstance>& gts, const EvalOptions& options,
                                            const AreaRange& range, const SimilarityFn& similarity,
                                            bool keypoint_mode);

/// Keypoint AP/AR with OKS matching.
EvalReport match_and_ap(const std::vector<PersonInstance>& preds, const std::vector<PersonInstance>& gts,
                        const EvalOptions& options = {});

/// Same protocol with box IoU; predictions carry their box in `bbox`.
EvalReport box_ap(const std::vector<PersonInstance>& preds, const std::vector<PersonInstance>& gts,
                  const EvalOptions& options = {});

/// Mean over gt (with labelled keypoints) of the best OKS among predictions
/// in the same image; 0 for gt with no prediction.
double mean_best_oks(const std::vector<PersonInstance>& preds, const std::vector<PersonInstance>& gts);

struct ImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int width = 0, height = 0;
};

/// COCO keypoint annotation subset: images plus person annotations.
struct KeypointDataset {
  std::vector<ImageRecord> images;
  std::vector<PersonInstance> annotations;
};

KeypointDataset parse_keypoint_dataset(const std::string& json_text);
KeypointDataset load_keypoint_dataset(const std::filesystem::path& path);
std::string keypoint_dataset_to_json(const KeypointDataset& dataset);

/// Results array: {image_id, category_id, keypoints[51], score}.
std::vector<PersonInstance> parse_results(const std::string& json_text);
std::vector<PersonInstance> load_results(const std::filesystem::path& path);
std::string results_to_json(const std::vector<PersonInstance>& results);

std::string report_to_json(const EvalReport& report);
std::string format_report(const EvalReport& report);

}  // namespace cpnkit
