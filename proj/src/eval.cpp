#include "cpnkit/eval.hpp"

#include "cpnkit/boxes.hpp"
#include "cpnkit/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <stdexcept>

namespace cpnkit {

double oks(const PersonInstance& pred, const PersonInstance& gt, const std::array<double, kNumKeypoints>& sigmas) {
  if (!(gt.area > 0)) throw std::invalid_argument("oks: ground truth area must be positive");
  double sum = 0;
  int labelled = 0;
  for (std::size_t k = 0; k < kNumKeypoints; ++k) {
    const Keypoint& g = gt.keypoints[k];
    if (g.v <= 0) continue;
    const double dx = pred.keypoints[k].x - g.x;
    const double dy = pred.keypoints[k].y - g.y;
    const double kappa = 2.0 * sigmas[k];
    sum += std::exp(-(dx * dx + dy * dy) / (2.0 * gt.area * kappa * kappa));
    ++labelled;
  }
  if (labelled == 0) throw std::invalid_argument("oks: ground truth has no labelled keypoint");
  return sum / labelled;
}

std::vector<double> EvalOptions::default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

namespace {

struct ScoredMatch {
  double score;
  bool matched;
  bool ignored;
};

constexpr int kRecallPoints = 101;

ThresholdResult summarise(double threshold, std::vector<ScoredMatch> dts, std::size_t relevant_gt) {
  ThresholdResult r;
  r.threshold = threshold;
  if (relevant_gt == 0) return r;
  std::stable_sort(dts.begin(), dts.end(), [](const ScoredMatch& a, const ScoredMatch& b) { return a.score > b.score; });
  std::vector<double> precision, recall;
  double tp = 0, fp = 0;
  for (const auto& d : dts) {
    if (d.ignored) continue;
    (d.matched ? tp : fp) += 1;
    precision.push_back(tp / (tp + fp));
    recall.push_back(tp / static_cast<double>(relevant_gt));
  }
  r.recall = recall.empty() ? 0.0 : recall.back();
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double sum = 0;
  for (int i = 0; i < kRecallPoints; ++i) {
    const double level = i * 0.01;
    const auto it = std::lower_bound(recall.begin(), recall.end(), level);
    if (it != recall.end()) sum += precision[static_cast<std::size_t>(it - recall.begin())];
  }
  r.precision = sum / kRecallPoints;
  return r;
}

double mean_valid(const std::vector<ThresholdResult>& rs, bool use_precision) {
  double sum = 0;
  int n = 0;
  for (const auto& r : rs) {
    const double v = use_precision ? r.precision : r.recall;
    if (v > -1) {
      sum += v;
      ++n;
    }
  }
  return n ? sum / n : -1.0;
}

const ThresholdResult* find_threshold(const std::vector<ThresholdResult>& rs, double t) {
  for (const auto& r : rs) {
    if (std::abs(r.threshold - t) < 1e-9) return &r;
  }
  return nullptr;
}

EvalReport build_report(const std::vector<PersonInstance>& preds, const std::vector<PersonInstance>& gts,
                        const EvalOptions& options, const SimilarityFn& similarity, bool keypoint_mode) {
  EvalReport rep;
  rep.per_threshold = evaluate_range(preds, gts, options, kAreaAll, similarity, keypoint_mode);
  const auto medium = evaluate_range(preds, gts, options, kAreaMedium, similarity, keypoint_mode);
  const auto large = evaluate_range(preds, gts, options, kAreaLarge, similarity, keypoint_mode);
  rep.ap = mean_valid(rep.per_threshold, true);
  rep.ar = mean_valid(rep.per_threshold, false);
  if (const auto* r = find_threshold(rep.per_threshold, 0.5)) {
    rep.ap50 = r->precision;
    rep.ar50 = r->recall;
  }
  if (const auto* r = find_threshold(rep.per_threshold, 0.75)) {
    rep.ap75 = r->precision;
    rep.ar75 = r->recall;
  }
  rep.ap_medium = mean_valid(medium, true);
  rep.ar_medium = mean_valid(medium, false);
  rep.ap_large = mean_valid(large, true);
  rep.ar_large = mean_valid(large, false);
  rep.num_predictions = preds.size();
  rep.num_ground_truth = gts.size();
  return rep;
}

}  // namespace

std::vector<ThresholdResult> evaluate_range(const std::vector<PersonInstance>& preds,
                                            const std::vector<PersonInstance>& gts, const EvalOptions& options,
                                            const AreaRange& range, const SimilarityFn& similarity,
                                            bool keypoint_mode) {
  std::map<std::int64_t, std::pair<std::vector<const PersonInstance*>, std::vector<const PersonInstance*>>> images;
  for (const auto& g : gts) {
    if (keypoint_mode && g.labeled_count() == 0) continue;
    images[g.image_id].second.push_back(&g);
  }
  for (const auto& p : preds) images[p.image_id].first.push_back(&p);

  const std::size_t nt = options.thresholds.size();
  std::vector<std::vector<ScoredMatch>> dts(nt);
  std::size_t relevant = 0;
  for (auto& [id, pair] : images) {
    auto& [ds, gs] = pair;
    std::stable_partition(gs.begin(), gs.end(), [&](const PersonInstance* g) { return range.contains(g->area); });
    std::vector<bool> gt_ignored(gs.size());
    for (std::size_t g = 0; g < gs.size(); ++g) {
      gt_ignored[g] = !range.contains(gs[g]->area);
      relevant += !gt_ignored[g];
    }
    std::stable_sort(ds.begin(), ds.end(),
                     [](const PersonInstance* a, const PersonInstance* b) { return a->score > b->score; });
    if (ds.size() > options.max_detections) ds.resize(options.max_detections);
    std::vector<double> sim(ds.size() * gs.size());
    for (std::size_t d = 0; d < ds.size(); ++d) {
      for (std::size_t g = 0; g < gs.size(); ++g) sim[d * gs.size() + g] = similarity(*ds[d], *gs[g]);
    }
    for (std::size_t t = 0; t < nt; ++t) {
      const double thr = options.thresholds[t];
      std::vector<bool> taken(gs.size(), false);
      for (std::size_t d = 0; d < ds.size(); ++d) {
        std::ptrdiff_t best = -1;
        double best_sim = 0;
        for (std::size_t g = 0; g < gs.size(); ++g) {
          if (taken[g]) continue;
          if (best >= 0 && !gt_ignored[static_cast<std::size_t>(best)] && gt_ignored[g]) break;
          const double s = sim[d * gs.size() + g];
          if (best < 0 ? s >= thr : s > best_sim) {
            best = static_cast<std::ptrdiff_t>(g);
            best_sim = s;
          }
        }
        ScoredMatch m{ds[d]->score, best >= 0, false};
        if (best >= 0) {
          taken[static_cast<std::size_t>(best)] = true;
          m.ignored = gt_ignored[static_cast<std::size_t>(best)];
        } else {
          m.ignored = !range.contains(ds[d]->area);
        }
        dts[t].push_back(m);
      }
    }
  }
  std::vector<ThresholdResult> out;
  for (std::size_t t = 0; t < nt; ++t) out.push_back(summarise(options.thresholds[t], std::move(dts[t]), relevant));
  return out;
}

EvalReport match_and_ap(const std::vector<PersonInstance>& preds, const std::vector<PersonInstance>& gts,
                        const EvalOptions& options) {
  return build_report(preds, gts, options,
                      [](const PersonInstance& p, const PersonInstance& g) { return oks(p, g); }, true);
}

EvalReport box_ap(const std::vector<PersonInstance>& preds, const std::vector<PersonInstance>& gts,
                  const EvalOptions& options) {
  return build_report(preds, gts, options,
                      [](const PersonInstance& p, const PersonInstance& g) { return iou(p.bbox, g.bbox); }, false);
}

double mean_best_oks(const std::vector<PersonInstance>& preds, const std::vector<PersonInstance>& gts) {
  std::map<std::int64_t, std::vector<const PersonInstance*>> by_image;
  for (const auto& p : preds) by_image[p.image_id].push_back(&p);
  double sum = 0;
  int n = 0;
  for (const auto& g : gts) {
    if (g.labeled_count() == 0) continue;
    double best = 0;
    for (const auto* p : by_image[g.image_id]) best = std::max(best, oks(*p, g));
    sum += best;
    ++n;
  }
  return n ? sum / n : 0.0;
}

namespace {

using nlohmann::json;

std::array<Keypoint, kNumKeypoints> keypoints_from_json(const json& arr) {
  if (!arr.is_array() || arr.size() != 3 * kNumKeypoints) {
    throw std::runtime_error("keypoints: expected 51 numbers");
  }
  std::array<Keypoint, kNumKeypoints> out{};
  for (std::size_t k = 0; k < kNumKeypoints; ++k) {
    out[k] = {arr[3 * k].get<double>(), arr[3 * k + 1].get<double>(), static_cast<int>(arr[3 * k + 2].get<double>())};
  }
  return out;
}

json keypoints_to_json(const std::array<Keypoint, kNumKeypoints>& kps) {
  json arr = json::array();
  for (const auto& k : kps) {
    arr.push_back(k.x);
    arr.push_back(k.y);
    arr.push_back(k.v);
  }
  return arr;
}

Box keypoint_extent(const std::array<Keypoint, kNumKeypoints>& kps) {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& k : kps) {
    if (k.v <= 0) continue;
    x0 = std::min(x0, k.x);
    y0 = std::min(y0, k.y);
    x1 = std::max(x1, k.x);
    y1 = std::max(y1, k.y);
  }
  if (x0 > x1) return {};
  return {x0, y0, x1 - x0, y1 - y0};
}

}  // namespace

KeypointDataset parse_keypoint_dataset(const std::string& json_text) {
  const json doc = json::parse(json_text);
  KeypointDataset ds;
  for (const auto& im : doc.at("images")) {
    ImageRecord r;
    r.id = im.at("id").get<std::int64_t>();
    r.file_name = im.value("file_name", "");
    r.width = im.value("width", 0);
    r.height = im.value("height", 0);
    ds.images.push_back(r);
  }
  for (const auto& a : doc.at("annotations")) {
    if (a.value("category_id", kPersonCategory) != kPersonCategory) continue;
    PersonInstance p;
    p.image_id = a.at("image_id").get<std::int64_t>();
    if (a.contains("id")) p.id = a.at("id").get<std::int64_t>();
    p.keypoints = keypoints_from_json(a.at("keypoints"));
    const auto& bb = a.at("bbox");
    p.bbox = {bb.at(0).get<double>(), bb.at(1).get<double>(), bb.at(2).get<double>(), bb.at(3).get<double>()};
    p.area = a.contains("area") ? a.at("area").get<double>() : p.bbox.area();
    ds.annotations.push_back(p);
  }
  return ds;
}

KeypointDataset load_keypoint_dataset(const std::filesystem::path& path) {
  return parse_keypoint_dataset(read_text_file(path));
}

std::string keypoint_dataset_to_json(const KeypointDataset& dataset) {
  json images = json::array();
  for (const auto& im : dataset.images) {
    images.push_back({{"id", im.id}, {"file_name", im.file_name}, {"width", im.width}, {"height", im.height}});
  }
  json annotations = json::array();
  std::int64_t next_id = 1;
  for (const auto& p : dataset.annotations) {
    annotations.push_back({{"id", p.id.value_or(next_id)},
                           {"image_id", p.image_id},
                           {"category_id", kPersonCategory},
                           {"keypoints", keypoints_to_json(p.keypoints)},
                           {"num_keypoints", p.labeled_count()},
                           {"bbox", {p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h}},
                           {"area", p.area},
                           {"iscrowd", 0}});
    ++next_id;
  }
  json names = json::array();
  for (auto n : kKeypointNames) names.push_back(std::string(n));
  json skeleton = json::array();
  for (auto [a, b] : kSkeleton) skeleton.push_back({a + 1, b + 1});
  json doc = {{"images", images},
              {"annotations", annotations},
              {"categories", json::array({{{"id", kPersonCategory},
                                           {"name", "person"},
                                           {"keypoints", names},
                                           {"skeleton", skeleton}}})}};
  return doc.dump(1);
}

std::vector<PersonInstance> parse_results(const std::string& json_text) {
  const json doc = json::parse(json_text);
  if (!doc.is_array()) throw std::runtime_error("results: expected a JSON array");
  std::vector<PersonInstance> out;
  for (const auto& r : doc) {
    PersonInstance p;
    p.image_id = r.at("image_id").get<std::int64_t>();
    p.keypoints = keypoints_from_json(r.at("keypoints"));
    p.score = r.at("score").get<double>();
    p.bbox = keypoint_extent(p.keypoints);
    p.area = p.bbox.area();
    out.push_back(p);
  }
  return out;
}

std::vector<PersonInstance> load_results(const std::filesystem::path& path) { return parse_results(read_text_file(path)); }

std::string results_to_json(const std::vector<PersonInstance>& results) {
  json doc = json::array();
  for (const auto& p : results) {
    doc.push_back({{"image_id", p.image_id},
                   {"category_id", kPersonCategory},
                   {"keypoints", keypoints_to_json(p.keypoints)},
                   {"score", p.score}});
  }
  return doc.dump(1);
}

std::string report_to_json(const EvalReport& r) {
  json per = json::array();
  for (const auto& t : r.per_threshold) per.push_back({{"threshold", t.threshold}, {"AP", t.precision}, {"AR", t.recall}});
  json doc = {{"AP", r.ap},
              {"AP50", r.ap50},
              {"AP75", r.ap75},
              {"AP_medium", r.ap_medium},
              {"AP_large", r.ap_large},
              {"AR", r.ar},
              {"AR50", r.ar50},
              {"AR75", r.ar75},
              {"AR_medium", r.ar_medium},
              {"AR_large", r.ar_large},
              {"num_predictions", r.num_predictions},
              {"num_ground_truth", r.num_ground_truth},
              {"per_threshold", per}};
  return doc.dump(2);
}

std::string format_report(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "%7s %7s %7s %7s %7s %7s\n%7.3f %7.3f %7.3f %7.3f %7.3f %7.3f\n"
                "(AR@.5 %.3f  AR@.75 %.3f  AR_m %.3f  AR_l %.3f; %zu predictions, %zu ground truth)\n",
                "AP", "AP@.5", "AP@.75", "AP_m", "AP_l", "AR", r.ap, r.ap50, r.ap75, r.ap_medium, r.ap_large, r.ar,
                r.ar50, r.ar75, r.ar_medium, r.ar_large, r.num_predictions, r.num_ground_truth);
  return buf;
}

}  // namespace cpnkit
