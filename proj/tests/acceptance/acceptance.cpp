// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.
//
//   acceptance --work <dir> [--only 1,2,...]

#include "cpnkit/pipeline.hpp"
#include "support/oracle_trials.hpp"
#include "support/primitive_checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>

using namespace cpnkit;
using namespace cpnkit::testing;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradientBudgetSeconds = 120;
constexpr int kMinGradientConfigs = 20;
constexpr int kOhkmTrials = 1000;
constexpr int kCodecInstances = 1000;
constexpr int kOracleTrials = 500;
constexpr double kOracleBudgetSeconds = 60;
constexpr int kOverfitScenes = 20;
constexpr std::uint64_t kOverfitSceneSeed = 7;
constexpr std::int64_t kMaxOverfitSteps = 3000;
constexpr double kOverfitBudgetSeconds = 15 * 60;
constexpr double kMinMeanOks = 0.85;
constexpr double kMinAp50 = 0.90;
constexpr std::size_t kLossWindow = 50;
constexpr int kDeterminismSteps = 20;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// 1 -------------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto start = Clock::now();
  CheckSummary all = check_all_primitives(101);
  const int primitive_configs = all.configs;
  std::uint64_t seed = 200;
  for (auto [g, r] : {std::pair{LossKind::kPlain, LossKind::kOhkm}, std::pair{LossKind::kNone, LossKind::kPlain},
                      std::pair{LossKind::kOhkm, LossKind::kOhkm}}) {
    all.merge(check_network(toy_check_config(true, g, r), 2, 100, seed++));
  }
  all.merge(check_network(toy_check_config(false, LossKind::kPlain, LossKind::kNone), 2, 100, seed++));
  const double secs = seconds_since(start);
  std::ostringstream os;
  os << all.configs << " configs (" << primitive_configs << " primitive, " << all.configs - primitive_configs
     << " network), " << all.checked << " partials (" << all.kinks << " kink-straddling probes replaced, " << all.redraws << " network draws redrawn), worst rel err " << fmt("%.3g", all.worst) << " at "
     << all.worst_at << ", " << fmt("%.1f", secs) << " s";
  return {all.passed() && all.configs >= kMinGradientConfigs && secs < kGradientBudgetSeconds, os.str()};
}

// 2 -------------------------------------------------------------------------

Outcome ohkm_identities() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution b(0.7);
  int equal = 0, compared = 0, zero_violations = 0;
  for (int t = 0; t < kOhkmTrials; ++t) {
    std::vector<double> l(kNumKeypoints);
    for (auto& x : l) x = u(rng);
    KeypointMask m(kNumKeypoints);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = b(rng);
    m[static_cast<std::size_t>(t % kNumKeypoints)] = true;
    const int n = static_cast<int>(std::count(m.begin(), m.end(), true));
    ++compared;
    equal += ohkm_loss(l, m, n).loss == plain_loss(l, m);
  }
  for (int t = 0; t < 200; ++t) {
    Grid<double> p({kNumKeypoints, 6, 5}), target({kNumKeypoints, 6, 5});
    for (Index i = 0; i < p.size(); ++i) {
      p[i] = u(rng);
      target[i] = u(rng);
    }
    KeypointMask m(kNumKeypoints);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = b(rng);
    Grid<double>::Array grad;
    const InstanceLoss r = heatmap_loss(p, target, m, LossKind::kOhkm, 8, &grad);
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (std::find(r.selected.begin(), r.selected.end(), k) != r.selected.end()) continue;
      zero_violations += !(grad.segment(k * 30, 30) == 0.0).all();
    }
  }
  std::ostringstream os;
  os << equal << "/" << compared << " bitwise equal to plain loss; " << zero_violations
     << " unselected channels with nonzero gradient over 200 instances";
  return {equal == compared && zero_violations == 0, os.str()};
}

// 3 -------------------------------------------------------------------------

Outcome codec_round_trip() {
  std::mt19937_64 rng(3);
  const CropSpec crop{128, 96};
  const HeatmapSpec spec = HeatmapSpec::for_crop(crop);
  std::uniform_real_distribution<double> u(0, 1);
  int outside = 0, keypoints = 0;
  double worst = 0;  // in units of the tolerance
  for (int t = 0; t < kCodecInstances; ++t) {
    PersonInstance p;
    const Box box{u(rng) * 300, u(rng) * 300, 20 + u(rng) * 200, 20 + u(rng) * 300};
    for (auto& k : p.keypoints) k = {box.x + u(rng) * box.w, box.y + u(rng) * box.h, 2};
    const Box ext = extend_box(box, crop);
    const AffineMap m = build_crop_transform(ext, crop);
    const auto enc = encode_target<double>(p, m, spec);
    const PoseResult r = decode(enc.stack, m, 1.0);
    // half a heatmap cell, times stride, in original pixels
    const double tol_x = 0.5 * spec.output_stride * ext.w / crop.target_width;
    const double tol_y = 0.5 * spec.output_stride * ext.h / crop.target_height;
    for (int k = 0; k < kNumKeypoints; ++k) {
      if (!enc.annotated[k]) continue;
      ++keypoints;
      const double e = std::max(std::abs(r.keypoints[k].x - p.keypoints[k].x) / tol_x,
                                std::abs(r.keypoints[k].y - p.keypoints[k].y) / tol_y);
      worst = std::max(worst, e);
      outside += e > 1.0 + 1e-9;
    }
  }

  std::uniform_real_distribution<double> centre(4, 12);
  Grid<double> maps({1, 16, 16});
  double quarter = 0, plain = 0;
  for (int t = 0; t < kCodecInstances; ++t) {
    const double cx = centre(rng), cy = centre(rng);
    for (Index y = 0; y < 16; ++y) {
      for (Index x = 0; x < 16; ++x) maps.at(0, 0, y, x) = std::exp(-((x - cx) * (x - cx) + (y - cy) * (y - cy)) / 8.0);
    }
    const Eigen::Vector2d q = quarter_offset_peak(maps, 0);
    const PeakLocation best = top_two(maps, 0)[0];
    quarter += std::hypot(q.x() - cx, q.y() - cy);
    plain += std::hypot(static_cast<double>(best.col) - cx, static_cast<double>(best.row) - cy);
  }
  quarter /= kCodecInstances;
  plain /= kCodecInstances;
  std::ostringstream os;
  os << keypoints << " keypoints, " << outside << " outside half a cell (worst " << fmt("%.3f", worst)
     << " of tolerance); mean error quarter-offset " << fmt("%.4f", quarter) << " vs argmax " << fmt("%.4f", plain)
     << " cells";
  return {outside == 0 && quarter < plain, os.str()};
}

// 4 -------------------------------------------------------------------------

Outcome oracle_equivalence() {
  const auto start = Clock::now();
  const std::pair<const char*, TrialSummary> runs[] = {
      {"hard_nms", hard_nms_trials(kOracleTrials, 41)},
      {"soft_nms(step)", step_soft_nms_trials(kOracleTrials, 42)},
      {"select_for_pose", select_trials(kOracleTrials, 43)},
      {"oks", oks_trials(kOracleTrials, 44)},
      {"match_and_ap", match_and_ap_trials(kOracleTrials, 45)},
  };
  const double secs = seconds_since(start);
  bool ok = secs < kOracleBudgetSeconds;
  std::ostringstream os;
  for (const auto& [name, s] : runs) {
    ok = ok && s.passed() && s.trials >= kOracleTrials;
    os << name << " " << s.trials - s.mismatches << "/" << s.trials;
    if (!s.passed()) os << " (" << s.first << ")";
    os << ", ";
  }
  os << fmt("%.1f", secs) << " s";
  return {ok, os.str()};
}

// 5 -------------------------------------------------------------------------

Outcome perfect_predictions() {
  std::mt19937_64 rng(5);
  std::vector<PersonInstance> gts;
  for (int img = 0; img < 8; ++img) {
    for (int i = 0; i < 3; ++i) {
      PersonInstance g = random_person(rng, img, i % 2 ? 400 : 120);
      g.area = i % 2 ? 160.0 * 160 : 60.0 * 60;
      g.id = img * 10 + i;
      gts.push_back(g);
    }
  }
  std::vector<PersonInstance> preds = gts;
  for (auto& p : preds) p.score = 1.0;
  const EvalReport r = match_and_ap(preds, gts);
  bool ok = r.ap == 1 && r.ap50 == 1 && r.ap75 == 1 && r.ap_medium == 1 && r.ap_large == 1 && r.ar == 1 &&
            r.ar50 == 1 && r.ar75 == 1 && r.ar_medium == 1 && r.ar_large == 1;
  for (const auto& t : r.per_threshold) ok = ok && t.precision == 1 && t.recall == 1;
  std::ostringstream os;
  os << gts.size() << " persons, " << r.per_threshold.size() << " thresholds; AP " << r.ap << " (M " << r.ap_medium
     << ", L " << r.ap_large << "), AR " << r.ar << " (M " << r.ar_medium << ", L " << r.ar_large << ")";
  return {ok, os.str()};
}

// 6 -------------------------------------------------------------------------

double tail_mean(const std::vector<TrainLogRow>& log, std::size_t window) {
  const std::size_t n = std::min(window, log.size());
  double s = 0;
  for (std::size_t i = log.size() - n; i < log.size(); ++i) s += log[i].final_l2;
  return n ? s / static_cast<double>(n) : std::nan("");
}

Outcome overfit(const fs::path& work) {
  const fs::path data_dir = work / "overfit_data";
  write_synthetic(data_dir, generate_synthetic(kOverfitScenes, SyntheticSpec{}, kOverfitSceneSeed));
  const LoadedDataset data = load_dataset(data_dir);
  const TrainingSet set = TrainingSet::from_dataset(data);

  const fs::path cfg_dir = CPNKIT_CONFIG_DIR;
  const ExperimentConfig cpn = parse_experiment_config(read_text_file(cfg_dir / "overfit.cfg"));
  const ExperimentConfig global_only = parse_experiment_config(read_text_file(cfg_dir / "overfit_globalnet.cfg"));

  auto run = [&](const ExperimentConfig& c, const std::string& name, double& secs) {
    TrainOptions opts;
    opts.out_dir = work / name;
    const auto start = Clock::now();
    TrainResult r = train(c, set, opts);
    secs = seconds_since(start);
    return r;
  };
  double cpn_secs = 0, global_secs = 0;
  const TrainResult a = run(cpn, "overfit_cpn", cpn_secs);
  const TrainResult b = run(global_only, "overfit_globalnet", global_secs);

  std::map<std::int64_t, Image> images;
  for (std::size_t i = 0; i < data.images.size(); ++i) images[data.annotations.images[i].id] = data.images[i];
  const InferReport rep = infer(Cpn<float>(cpn.model), a.params, images, data.detections);
  write_text_file(work / "overfit_results.json", results_to_json(rep.results));
  std::vector<PersonInstance> labelled;
  for (const auto& g : data.annotations.annotations) {
    if (g.labeled_count() > 0) labelled.push_back(g);
  }
  const double mean_oks = mean_best_oks(rep.results, labelled);
  const EvalReport ev = match_and_ap(rep.results, data.annotations.annotations);

  const double cpn_l2 = tail_mean(a.log, kLossWindow), global_l2 = tail_mean(b.log, kLossWindow);
  const bool ok = !a.diverged && !b.diverged && cpn.train.max_steps <= kMaxOverfitSteps &&
                  global_only.train.max_steps == cpn.train.max_steps && cpn_secs < kOverfitBudgetSeconds &&
                  global_secs < kOverfitBudgetSeconds && mean_oks >= kMinMeanOks && ev.ap50 >= kMinAp50 &&
                  cpn_l2 <= global_l2;
  std::ostringstream os;
  os << set.items.size() << " persons, " << cpn.train.max_steps << " steps (" << fmt("%.0f", cpn_secs) << " s CPN, "
     << fmt("%.0f", global_secs) << " s GlobalNet-only); mean OKS " << fmt("%.3f", mean_oks) << ", AP "
     << fmt("%.3f", ev.ap) << ", AP@.5 " << fmt("%.3f", ev.ap50) << "; final L2 over last " << kLossWindow
     << " steps " << fmt("%.3g", cpn_l2) << " (CPN+OHKM) vs " << fmt("%.3g", global_l2) << " (GlobalNet-only)";
  if (a.diverged || b.diverged) os << "; diverged: " << a.message << b.message;
  return {ok, os.str()};
}

// 7 -------------------------------------------------------------------------

Outcome ablation_switchboard() {
  const fs::path dir = fs::path(CPNKIT_CONFIG_DIR) / "ablation";
  const std::vector<std::string> design{"refine_concat", "refine_one_bottleneck", "refine_cpn"};
  const std::vector<std::string> placement{"loss_refine_only", "loss_plain_plain", "loss_plain_ohkm"};
  bool ok = true;
  std::ostringstream os;
  auto group = [&](const std::vector<std::string>& names) {
    std::set<std::string> seen;
    for (const auto& n : names) {
      const ModelConfig c = parse_experiment_config(read_text_file(dir / (n + ".cfg"))).model;
      const auto store = Cpn<float>(c).init_params(0);
      std::int64_t summed = 0;
      for (const auto& e : store.entries()) {
        if (e.trainable) summed += e.value.size();
      }
      const std::int64_t closed = count_params(c);
      ok = ok && closed == summed;
      seen.insert(describe_architecture(c));
      os << n << " " << closed << (closed == summed ? "" : " (store " + std::to_string(summed) + ")") << ", ";
    }
    ok = ok && seen.size() == names.size();
  };
  group(design);
  group(placement);
  os << "descriptions distinct within each table: " << (ok ? "yes" : "no");
  return {ok, os.str()};
}

// 8 -------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + CPNKIT_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  return std::system(cmd.c_str());
}

Outcome determinism(const fs::path& work) {
  const fs::path data = work / "determinism_data";
  const std::string cfg = (fs::path(CPNKIT_CONFIG_DIR) / "overfit.cfg").string();
  if (run_cli("synth --out \"" + data.string() + "\" --scenes 4 --seed 3", work / "synth.log") != 0) {
    return {false, "synth failed, see " + (work / "synth.log").string()};
  }
  for (const char* run : {"run_a", "run_b"}) {
    fs::remove_all(work / run);
    const std::string args = "train --config \"" + cfg + "\" --data \"" + data.string() + "\" --out \"" +
                             (work / run).string() + "\" --steps " + std::to_string(kDeterminismSteps);
    if (run_cli(args, work / (std::string(run) + ".log")) != 0) return {false, std::string("train failed in ") + run};
  }
  const std::string ca = slurp(work / "run_a" / "model.ckpt"), cb = slurp(work / "run_b" / "model.ckpt");
  const std::string la = slurp(work / "run_a" / "train_log.csv"), lb = slurp(work / "run_b" / "train_log.csv");
  std::ostringstream os;
  os << kDeterminismSteps << "-step CLI runs: checkpoint " << ca.size() << " bytes "
     << (ca == cb ? "identical" : "DIFFERENT") << ", log " << la.size() << " bytes "
     << (la == lb ? "identical" : "DIFFERENT");
  return {!ca.empty() && ca == cb && !la.empty() && la == lb, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "cpnkit_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    } else {
      std::cerr << "usage: acceptance [--work DIR] [--only 1,2,...]\n";
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"OHKM identities", ohkm_identities},
      {"codec round trip", codec_round_trip},
      {"oracle equivalence", oracle_equivalence},
      {"perfect predictions", perfect_predictions},
      {"overfit experiment", [&] { return overfit(work); }},
      {"ablation switchboard", ablation_switchboard},
      {"determinism", [&] { return determinism(work); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << id << " " << criteria[i].first << ": " << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
