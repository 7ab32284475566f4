#pragma once

#include "cpnkit/grid.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace cpnkit {

enum class LossKind { kNone, kPlain, kOhkm };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);

struct LossConfig {
  int hard_keypoints = 8;  // M
  int num_keypoints = 17;  // N
  LossKind global_loss = LossKind::kPlain;
  LossKind refine_loss = LossKind::kOhkm;

  void validate() const;
};

/// Architecture plus the loss placement it is trained with.
struct ModelConfig {
  std::array<Index, 4> backbone_widths{16, 32, 64, 128};
  Index blocks_per_stage = 2;
  Index lateral_channels = 64;
  Index num_keypoints = 17;
  bool refine_enabled = true;
  std::array<Index, 4> refine_blocks{0, 1, 2, 3};  // P2..P5
  Index refine_levels = 4;                         // concatenate P2..P(1+levels)
  Index crop_height = 128;
  Index crop_width = 96;
  Index output_stride = 4;
  double target_sigma = 2.0;
  LossConfig loss;

  void validate() const;
  Index heatmap_height() const { return crop_height / output_stride; }
  Index heatmap_width() const { return crop_width / output_stride; }
};

struct TrainConfig {
  double learning_rate = 5e-4;
  double lr_decay_factor = 2.0;
  std::int64_t lr_decay_interval = 3600000;
  double weight_decay = 1e-5;
  Index batch_size = 8;
  std::uint64_t seed = 1;
  std::int64_t max_steps = 1000;
  std::int64_t checkpoint_interval = 0;  // 0: final checkpoint only
  bool augment = true;
  bool augment_flip = true;
  double max_rotation_deg = 45.0;
  double min_scale = 0.7;
  double max_scale = 1.35;

  void validate() const;
  double learning_rate_at(std::int64_t step) const;
};

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Flat `key = value` text. '#' starts a comment; unknown keys are rejected.
std::map<std::string, std::string> parse_key_values(const std::string& text);

ModelConfig parse_model_config(const std::string& text);
ExperimentConfig parse_experiment_config(const std::string& text);
std::string to_text(const ModelConfig& config);
std::string to_text(const TrainConfig& config);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace cpnkit
