// Command-line front end: synth, train, infer, eval, nms-bench, render.

#include "cpnkit/boxes.hpp"
#include "cpnkit/config.hpp"
#include "cpnkit/eval.hpp"
#include "cpnkit/pipeline.hpp"
#include "cpnkit/synthetic.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>

namespace fs = std::filesystem;
using namespace cpnkit;

namespace {

// Image ids from annotations.json when the directory is a dataset, else
// from numeric file stems (<id>.png / <id>.ppm).
std::map<std::int64_t, Image> load_images(const fs::path& dir) {
  std::map<std::int64_t, Image> out;
  if (fs::exists(dir / "annotations.json")) {
    for (const auto& rec : load_keypoint_dataset(dir / "annotations.json").images) {
      out[rec.id] = read_image(dir / rec.file_name);
    }
    return out;
  }
  const fs::path root = fs::exists(dir / "images") ? dir / "images" : dir;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto ext = entry.path().extension();
    if (ext != ".png" && ext != ".ppm") continue;
    try {
      out[std::stoll(entry.path().stem().string())] = read_image(entry.path());
    } catch (const std::invalid_argument&) {
      std::cerr << "skipping " << entry.path() << ": file stem is not an image id\n";
    }
  }
  return out;
}

struct NmsFlags {
  bool soft = false;
  std::optional<double> hard;

  NmsOptions options() const {
    NmsOptions o{NmsOptions::Kind::kNone};
    if (soft) o.kind = NmsOptions::Kind::kSoft;
    if (hard) {
      o.kind = NmsOptions::Kind::kHard;
      o.iou_threshold = *hard;
    }
    return o;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cpnkit: cascaded pyramid network toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic keypoint dataset");
  fs::path synth_out;
  int scenes = 20;
  std::uint64_t synth_seed = 1;
  SyntheticSpec spec;
  bool no_occlusion = false;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--scenes", scenes, "Number of scenes");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--width", spec.image_width, "Image width");
  synth->add_option("--height", spec.image_height, "Image height");
  synth->add_option("--min-persons", spec.min_persons);
  synth->add_option("--max-persons", spec.max_persons);
  synth->add_option("--jitter", spec.box_jitter, "Detection box jitter (fraction of size)");
  synth->add_flag("--no-occlusion", no_occlusion, "Keep persons apart");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  fs::path config_path, data_dir, train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::int64_t> train_steps;
  train_cmd->add_option("--config", config_path, "Experiment config (key = value)")->required();
  train_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Output directory")->required();
  train_cmd->add_option("--seed", train_seed, "Override the config seed");
  train_cmd->add_option("--steps", train_steps, "Override max_steps");

  // infer
  auto* infer_cmd = app.add_subcommand("infer", "Estimate poses for detected boxes");
  fs::path model_dir, images_dir, detections_path, results_path;
  bool no_flip = false, no_smooth = false;
  NmsFlags infer_nms;
  infer_cmd->add_option("--model", model_dir, "Trained model directory")->required();
  infer_cmd->add_option("--images", images_dir, "Image or dataset directory")->required();
  infer_cmd->add_option("--detections", detections_path, "Detections JSON")->required();
  infer_cmd->add_option("--out", results_path, "results.json")->required();
  infer_cmd->add_flag("--no-flip", no_flip, "Disable flip averaging");
  infer_cmd->add_flag("--no-smooth", no_smooth, "Disable heatmap smoothing");
  auto* soft_flag = infer_cmd->add_flag("--soft-nms", infer_nms.soft, "Gaussian Soft-NMS before pose estimation");
  infer_cmd->add_option("--hard-nms", infer_nms.hard, "Hard NMS at this IoU threshold")->excludes(soft_flag);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "OKS-based AP/AR");
  fs::path gt_path, eval_results, report_path;
  eval_cmd->add_option("--gt", gt_path, "Ground-truth annotations JSON")->required();
  eval_cmd->add_option("--results", eval_results, "results.json")->required();
  eval_cmd->add_option("--report", report_path, "Report JSON output");

  // nms-bench
  auto* bench = app.add_subcommand("nms-bench", "Compare suppression strategies on detections");
  fs::path bench_dets, bench_gt, bench_model, bench_images, bench_report;
  bench->add_option("--detections", bench_dets, "Detections JSON")->required();
  bench->add_option("--gt", bench_gt, "Ground-truth annotations JSON")->required();
  bench->add_option("--model", bench_model, "Model directory: score keypoint AP instead of box AP");
  bench->add_option("--images", bench_images, "Image directory (with --model)");
  bench->add_option("--report", bench_report, "Report JSON output");

  // render
  auto* render = app.add_subcommand("render", "Draw skeleton overlays");
  fs::path render_images, render_results, render_out;
  double min_score = 0.0;
  render->add_option("--images", render_images, "Image or dataset directory")->required();
  render->add_option("--results", render_results, "results.json or annotations JSON")->required();
  render->add_option("--out", render_out, "Output directory")->required();
  render->add_option("--min-score", min_score, "Hide poses scoring below this");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      spec.allow_occlusion = !no_occlusion;
      const auto generated = generate_synthetic(scenes, spec, synth_seed);
      write_synthetic(synth_out, generated);
      std::size_t persons = 0;
      for (const auto& s : generated) persons += s.persons.size();
      std::cout << "wrote " << generated.size() << " scenes, " << persons << " persons to " << synth_out << "\n";
    } else if (*train_cmd) {
      ExperimentConfig cfg = parse_experiment_config(read_text_file(config_path));
      if (train_seed) cfg.train.seed = *train_seed;
      if (train_steps) cfg.train.max_steps = *train_steps;
      const TrainingSet data = TrainingSet::from_dataset(load_dataset(data_dir));
      TrainOptions opts;
      opts.out_dir = train_out;
      opts.progress = &std::cout;
      const TrainResult r = train(cfg, data, opts);
      if (r.diverged) {
        std::cerr << "training aborted: " << r.message << "\n";
        return 2;
      }
    } else if (*infer_cmd) {
      const LoadedModel m = load_model(model_dir);
      const Cpn<float> net(m.config.model);
      InferOptions opts;
      opts.flip = !no_flip;
      opts.smooth = !no_smooth;
      opts.nms = infer_nms.options();
      const InferReport rep = infer(net, m.params, load_images(images_dir), load_detections(detections_path), opts);
      for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
      write_text_file(results_path, results_to_json(rep.results));
      const auto expected = count_flops(m.config.model, m.config.model.crop_height, m.config.model.crop_width);
      std::printf("%zu crops, %zu forwards in %.2f s (%.1f crops/s); FLOPs per forward %.0f (closed form %lld)\n",
                  rep.crops, rep.forwards, rep.seconds, rep.seconds > 0 ? rep.crops / rep.seconds : 0.0,
                  rep.flops_per_forward(), static_cast<long long>(expected));
    } else if (*eval_cmd) {
      const KeypointDataset gt = load_keypoint_dataset(gt_path);
      const EvalReport rep = match_and_ap(load_results(eval_results), gt.annotations);
      std::cout << format_report(rep);
      if (!report_path.empty()) write_text_file(report_path, report_to_json(rep));
    } else if (*bench) {
      const KeypointDataset gt = load_keypoint_dataset(bench_gt);
      const auto dets = load_detections(bench_dets);
      std::optional<LoadedModel> model;
      std::map<std::int64_t, Image> images;
      if (!bench_model.empty()) {
        if (bench_images.empty()) throw std::invalid_argument("nms-bench: --model needs --images");
        model = load_model(bench_model);
        images = load_images(bench_images);
      }
      std::vector<std::pair<std::string, NmsOptions>> strategies;
      for (double t : {0.3, 0.4, 0.5, 0.6, 0.7}) {
        char name[32];
        std::snprintf(name, sizeof name, "NMS(thr=%.1f)", t);
        strategies.push_back({name, {NmsOptions::Kind::kHard, t}});
      }
      strategies.push_back({"Soft-NMS", {NmsOptions::Kind::kSoft}});
      nlohmann::json out = nlohmann::json::array();
      std::printf("%-14s %7s %7s %7s\n", "strategy", model ? "AP" : "boxAP", "AP@.5", "AR");
      for (const auto& [name, nms] : strategies) {
        EvalReport rep;
        if (model) {
          const Cpn<float> net(model->config.model);
          InferOptions opts;
          opts.nms = nms;
          rep = match_and_ap(infer(net, model->params, images, dets, opts).results, gt.annotations);
        } else {
          std::vector<PersonInstance> boxes;
          for (const auto& d : select_for_pose(suppress(dets, nms))) {
            PersonInstance p;
            p.image_id = d.image_id;
            p.bbox = d.box;
            p.area = d.box.area();
            p.score = d.score;
            boxes.push_back(p);
          }
          rep = box_ap(boxes, gt.annotations);
        }
        std::printf("%-14s %7.3f %7.3f %7.3f\n", name.c_str(), rep.ap, rep.ap50, rep.ar);
        out.push_back({{"strategy", name}, {"AP", rep.ap}, {"AP50", rep.ap50}, {"AR", rep.ar}});
      }
      if (!bench_report.empty()) write_text_file(bench_report, out.dump(2));
    } else if (*render) {
      std::vector<PersonInstance> poses;
      const std::string text = read_text_file(render_results);
      if (nlohmann::json::parse(text).is_object()) {
        poses = parse_keypoint_dataset(text).annotations;
      } else {
        poses = parse_results(text);
      }
      fs::create_directories(render_out);
      for (const auto& [id, image] : load_images(render_images)) {
        std::vector<PersonInstance> mine;
        for (const auto& p : poses) {
          if (p.image_id == id) mine.push_back(p);
        }
        write_png(render_out / (std::to_string(id) + ".png"), render_poses(image, mine, min_score));
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
