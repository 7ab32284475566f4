#pragma once

#include "cpnkit/boxes.hpp"
#include "cpnkit/config.hpp"
#include "cpnkit/geometry.hpp"
#include "cpnkit/heatmap.hpp"
#include "cpnkit/image.hpp"
#include "cpnkit/loss.hpp"
#include "cpnkit/network.hpp"
#include "cpnkit/synthetic.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace cpnkit {

struct TrainItem {
  std::size_t image = 0;  // index into TrainingSet::images
  PersonInstance instance;
};

struct TrainingSet {
  std::vector<Image> images;
  std::vector<TrainItem> items;

  /// Every annotated person with at least one labelled keypoint.
  static TrainingSet from_dataset(const LoadedDataset& dataset);
};

/// One network input: normalised crop, stride-4 targets and the loss mask.
struct CropSample {
  Image crop;
  Grid<float> targets;
  KeypointMask annotated;
};

/// Extends the gt box to the crop aspect and warps with `aug`; a mirrored crop
/// also exchanges left/right labels so targets follow the pixels.
CropSample make_crop_sample(const Image& image, const PersonInstance& instance, const ModelConfig& model,
                            const AugmentParams& aug);

/// Left/right label exchange without moving any point.
PersonInstance swap_left_right(const PersonInstance& instance);

struct TrainLogRow {
  std::int64_t step = 0;
  double learning_rate = 0;
  LossBreakdown loss;
  double final_l2 = 0;  // plain L2 of the test-time prediction head
};

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;  // model.ckpt, model.cfg, train_log.csv
  std::ostream* progress = nullptr;
  std::int64_t progress_every = 100;
};

struct TrainResult {
  ParamStore<float> params;
  std::vector<TrainLogRow> log;
  bool diverged = false;
  std::string message;
};

/// Sample -> augment -> encode -> forward -> loss -> backward -> Adam, one
/// sequential step at a time. Deterministic in (config, data).
TrainResult train(const ExperimentConfig& config, const TrainingSet& data, const TrainOptions& options = {});

std::string log_header();
std::string log_line(const TrainLogRow& row);

/// Saved model directory: model.cfg (model and train keys) plus model.ckpt.
struct LoadedModel {
  ExperimentConfig config;
  ParamStore<float> params;
};
void save_model(const std::filesystem::path& dir, const ExperimentConfig& config, const ParamStore<float>& params);
LoadedModel load_model(const std::filesystem::path& dir);

struct InferOptions {
  bool flip = true;
  bool smooth = true;
  double smooth_sigma = 1.0;
  NmsOptions nms{NmsOptions::Kind::kNone};  // kNone: detections are already suppressed
  bool select_top = true;                   // top-100 over all classes, then persons
  std::size_t top_cap = 100;
};

struct InferReport {
  std::vector<PersonInstance> results;  // one per processed box, box order
  std::vector<PoseResult> poses;
  std::vector<std::string> warnings;
  std::size_t crops = 0;
  std::size_t forwards = 0;
  std::uint64_t conv_macs = 0;
  double seconds = 0;

  double flops_per_forward() const { return forwards ? 2.0 * static_cast<double>(conv_macs) / static_cast<double>(forwards) : 0.0; }
};

/// Per selected box: extend -> crop -> forward (+ mirrored forward) ->
/// flip_average -> smooth -> decode -> rescore. Boxes are processed in
/// parallel; output order follows the box order.
InferReport infer(const Cpn<float>& model, const ParamStore<float>& params, const std::map<std::int64_t, Image>& images,
                  const std::vector<DetectionBox>& detections, const InferOptions& options = {});

/// Skeleton overlay of predictions (or ground truth) on a copy of `image`.
Image render_poses(const Image& image, const std::vector<PersonInstance>& poses, double min_score = 0.0);

}  // namespace cpnkit
