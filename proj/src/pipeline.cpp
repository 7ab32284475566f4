#include "cpnkit/pipeline.hpp"

#include "cpnkit/optim.hpp"
#include "cpnkit/parallel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cpnkit {

TrainingSet TrainingSet::from_dataset(const LoadedDataset& dataset) {
  TrainingSet set;
  set.images = dataset.images;
  std::map<std::int64_t, std::size_t> index;
  for (std::size_t i = 0; i < dataset.annotations.images.size(); ++i) index[dataset.annotations.images[i].id] = i;
  for (const auto& a : dataset.annotations.annotations) {
    if (a.labeled_count() == 0 || !(a.bbox.w > 0) || !(a.bbox.h > 0)) continue;
    const auto it = index.find(a.image_id);
    if (it == index.end()) throw std::runtime_error("annotation refers to unknown image " + std::to_string(a.image_id));
    set.items.push_back({it->second, a});
  }
  return set;
}

PersonInstance swap_left_right(const PersonInstance& instance) {
  PersonInstance out = instance;
  for (std::size_t k = 0; k < kNumKeypoints; ++k) out.keypoints[k] = instance.keypoints[static_cast<std::size_t>(kFlipIndex[k])];
  return out;
}

CropSample make_crop_sample(const Image& image, const PersonInstance& instance, const ModelConfig& model,
                            const AugmentParams& aug) {
  const CropSpec crop{model.crop_height, model.crop_width};
  const AffineMap map = build_crop_transform(extend_box(instance.bbox, crop), crop, aug);
  const HeatmapSpec spec = HeatmapSpec::for_crop(crop, model.output_stride, model.target_sigma);
  EncodedTarget<float> target = encode_target<float>(aug.flip ? swap_left_right(instance) : instance, map, spec);
  return {normalize_pixels(warp_image(image, map, crop.target_height, crop.target_width)), std::move(target.stack.maps),
          std::move(target.annotated)};
}

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double plain_l2(const Grid<float>& pred, const Grid<float>& targets, const std::vector<KeypointMask>& masks) {
  double sum = 0;
  for (Index b = 0; b < targets.batch(); ++b) {
    const auto per_k = per_keypoint_l2(batch_item(pred, b), batch_item(targets, b), masks[static_cast<std::size_t>(b)]);
    sum += plain_loss(per_k, masks[static_cast<std::size_t>(b)]);
  }
  return sum / static_cast<double>(targets.batch());
}

}  // namespace

std::string log_header() {
  return "step,lr,total,global_p2,global_p3,global_p4,global_p5,refine,final_l2,selected";
}

std::string log_line(const TrainLogRow& row) {
  std::ostringstream os;
  os << row.step << "," << format_double(row.learning_rate) << "," << format_double(row.loss.total);
  for (double g : row.loss.global) os << "," << format_double(g);
  os << "," << format_double(row.loss.refine) << "," << format_double(row.final_l2) << ",";
  for (std::size_t i = 0; i < row.loss.refine_selected.size(); ++i) {
    if (i) os << ";";
    for (std::size_t j = 0; j < row.loss.refine_selected[i].size(); ++j) os << (j ? " " : "") << row.loss.refine_selected[i][j];
  }
  return os.str();
}

void save_model(const std::filesystem::path& dir, const ExperimentConfig& config, const ParamStore<float>& params) {
  std::filesystem::create_directories(dir);
  write_text_file(dir / "model.cfg", to_text(config.model) + to_text(config.train));
  params.save(dir / "model.ckpt");
}

LoadedModel load_model(const std::filesystem::path& dir) {
  LoadedModel m;
  m.config = parse_experiment_config(read_text_file(dir / "model.cfg"));
  const Cpn<float> net(m.config.model);
  m.params = net.init_params(0);
  m.params.load(dir / "model.ckpt");
  return m;
}

TrainResult train(const ExperimentConfig& config, const TrainingSet& data, const TrainOptions& options) {
  config.model.validate();
  config.train.validate();
  if (data.items.empty()) throw std::invalid_argument("train: no annotated persons in the training set");
  const ModelConfig& mc = config.model;
  const TrainConfig& tc = config.train;
  const Cpn<float> net(mc);
  TrainResult result;
  result.params = net.init_params(tc.seed);

  std::ofstream log_file;
  if (options.out_dir) {
    std::filesystem::create_directories(*options.out_dir);
    log_file.open(*options.out_dir / "train_log.csv");
    if (!log_file) throw std::runtime_error("train: cannot write " + (*options.out_dir / "train_log.csv").string());
    log_file << "# " << describe_architecture(mc) << "\n" << log_header() << "\n";
  }
  if (options.progress) *options.progress << describe_architecture(mc) << "\n";

  std::mt19937_64 rng(tc.seed ^ 0x5DEECE66DULL);
  std::vector<std::size_t> order(data.items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  ForwardCache<float> cache;
  const auto batch = static_cast<std::size_t>(tc.batch_size);
  for (std::int64_t step = 0; step < tc.max_steps; ++step) {
    std::vector<std::size_t> picks(batch);
    std::vector<AugmentParams> augs(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      picks[b] = order[cursor++];
      if (tc.augment) {
        augs[b].flip = tc.augment_flip && unit(rng) < 0.5;
        augs[b].rotation_deg = tc.max_rotation_deg * (2.0 * unit(rng) - 1.0);
        augs[b].scale = tc.min_scale + (tc.max_scale - tc.min_scale) * unit(rng);
      }
    }
    std::vector<CropSample> samples(batch);
    parallel_for(batch, [&](std::size_t b) {
      const TrainItem& item = data.items[picks[b]];
      samples[b] = make_crop_sample(data.images[item.image], item.instance, mc, augs[b]);
    });
    std::vector<Image> crops;
    std::vector<Grid<float>> targets;
    std::vector<KeypointMask> masks;
    for (auto& s : samples) {
      crops.push_back(std::move(s.crop));
      targets.push_back(std::move(s.targets));
      masks.push_back(std::move(s.annotated));
    }
    const Grid<float> images = stack_batch(crops);
    const Grid<float> target = stack_batch(targets);

    NetworkOutput<float> out = net.forward(result.params, images, Mode::kTrain, &cache);
    TrainLogRow row;
    row.step = step;
    row.learning_rate = tc.learning_rate_at(step);
    row.loss = total_loss(out, target, masks, mc.loss, true);
    row.final_l2 = plain_l2(out.prediction(), target, masks);
    result.log.push_back(row);
    if (log_file) log_file << log_line(row) << "\n";
    if (!std::isfinite(row.loss.total)) {
      result.diverged = true;
      result.message = "loss is not finite at step " + std::to_string(step);
      break;
    }
    result.params.zero_grad();
    net.backward(result.params, cache, out);
    Cpn<float>::commit_running_stats(result.params, cache);
    const StepReport rep = adam_step(result.params, tc, step);
    if (!rep.applied) {
      result.diverged = true;
      result.message = "non-finite gradient in " + rep.rejected_by + " at step " + std::to_string(step);
      break;
    }
    if (options.progress && (step % options.progress_every == 0 || step + 1 == tc.max_steps)) {
      *options.progress << "step " << step << " loss " << format_double(row.loss.total) << " final_l2 "
                        << format_double(row.final_l2) << "\n";
    }
    if (options.out_dir && tc.checkpoint_interval > 0 && (step + 1) % tc.checkpoint_interval == 0) {
      result.params.save(*options.out_dir / ("step" + std::to_string(step + 1) + ".ckpt"));
    }
  }
  result.params.zero_grad();
  for (auto& e : result.params.entries()) e.value.drop_grad();
  if (options.out_dir) save_model(*options.out_dir, config, result.params);
  if (result.diverged && options.progress) *options.progress << "diverged: " << result.message << "\n";
  return result;
}

InferReport infer(const Cpn<float>& model, const ParamStore<float>& params, const std::map<std::int64_t, Image>& images,
                  const std::vector<DetectionBox>& detections, const InferOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<DetectionBox> boxes = detections;
  if (options.nms.kind != NmsOptions::Kind::kNone) boxes = suppress(boxes, options.nms);
  if (options.select_top) boxes = select_for_pose(boxes, kPersonCategory, options.top_cap);

  const ModelConfig& mc = model.config();
  const CropSpec crop{mc.crop_height, mc.crop_width};
  std::vector<std::optional<PoseResult>> poses(boxes.size());
  std::vector<std::string> warnings(boxes.size());
  std::vector<std::uint64_t> macs(boxes.size(), 0);
  std::vector<int> forwards(boxes.size(), 0);

  parallel_for(boxes.size(), [&](std::size_t i) {
    const DetectionBox& det = boxes[i];
    const auto it = images.find(det.image_id);
    if (it == images.end()) {
      warnings[i] = "image " + std::to_string(det.image_id) + " not found; box skipped";
      return;
    }
    const Image& image = it->second;
    const Box frame{0, 0, static_cast<double>(image.width()), static_cast<double>(image.height())};
    if (!(det.box.w > 0) || !(det.box.h > 0) || iou(det.box, frame) <= 0) {
      warnings[i] = "box outside image " + std::to_string(det.image_id) + "; skipped";
      return;
    }
    const AffineMap map = build_crop_transform(extend_box(det.box, crop), crop);
    const Image input = normalize_pixels(warp_image(image, map, crop.target_height, crop.target_width));
    const Index n = options.flip ? 2 : 1;
    std::vector<Image> batch{input};
    if (options.flip) batch.push_back(flip_horizontal(input));
    const std::uint64_t before = conv_macs();
    const NetworkOutput<float> out = model.forward(params, stack_batch(batch), Mode::kEval);
    macs[i] = conv_macs() - before;
    forwards[i] = static_cast<int>(n);
    HeatmapStack<float> stack{batch_item(out.prediction(), 0), mc.output_stride};
    if (options.flip) stack = flip_average(stack, HeatmapStack<float>{batch_item(out.prediction(), 1), mc.output_stride});
    if (options.smooth) stack = smooth(stack, options.smooth_sigma);
    poses[i] = decode(stack, map, det.score);
  });

  InferReport report;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    if (!warnings[i].empty()) report.warnings.push_back(warnings[i]);
    report.conv_macs += macs[i];
    report.forwards += static_cast<std::size_t>(forwards[i]);
    if (!poses[i]) continue;
    ++report.crops;
    report.poses.push_back(*poses[i]);
    report.results.push_back(poses[i]->to_instance(boxes[i].image_id));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

Image render_poses(const Image& image, const std::vector<PersonInstance>& poses, double min_score) {
  Image out = image;
  const Index h = image.height(), w = image.width();
  for (const auto& p : poses) {
    if (p.score < min_score) continue;
    for (auto [a, b] : kSkeleton) {
      const Keypoint& ka = p.keypoints[static_cast<std::size_t>(a)];
      const Keypoint& kb = p.keypoints[static_cast<std::size_t>(b)];
      if (ka.v <= 0 || kb.v <= 0) continue;
      const bool left = (a % 2 == 1) && (b % 2 == 1);
      const Rgb color = left ? Rgb{1.0f, 0.5f, 0.0f} : Rgb{0.0f, 0.8f, 1.0f};
      paint(out, segment_pixels({ka.x, ka.y}, {kb.x, kb.y}, 1.0, h, w), color);
    }
    for (const auto& k : p.keypoints) {
      if (k.v > 0) paint(out, disk_pixels({k.x, k.y}, 2.0, h, w), {1.0f, 0.0f, 0.0f});
    }
  }
  return out;
}

}  // namespace cpnkit
