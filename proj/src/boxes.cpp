#include "cpnkit/boxes.hpp"

#include "cpnkit/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace cpnkit {

double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

namespace {

std::vector<std::size_t> score_order(const std::vector<DetectionBox>& boxes) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  return order;
}

void check_box(const DetectionBox& b) {
  if (!(b.box.w > 0) || !(b.box.h > 0) || !std::isfinite(b.score)) {
    throw std::invalid_argument("detection box needs w > 0, h > 0 and a finite score (image " +
                                std::to_string(b.image_id) + ")");
  }
}

}  // namespace

std::vector<DetectionBox> hard_nms(const std::vector<DetectionBox>& boxes, double iou_threshold) {
  if (!(iou_threshold > 0 && iou_threshold < 1)) throw std::invalid_argument("hard_nms: threshold must be in (0,1)");
  std::vector<DetectionBox> kept;
  for (std::size_t i : score_order(boxes)) {
    check_box(boxes[i]);
    const bool clear = std::all_of(kept.begin(), kept.end(),
                                   [&](const DetectionBox& k) { return iou(k, boxes[i]) <= iou_threshold; });
    if (clear) kept.push_back(boxes[i]);
  }
  return kept;
}

DecayFn gaussian_decay(double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("gaussian_decay: sigma must be positive");
  return [sigma](double o) { return std::exp(-o * o / sigma); };
}

DecayFn step_decay(double iou_threshold) {
  return [iou_threshold](double o) { return o > iou_threshold ? 0.0 : 1.0; };
}

std::vector<DetectionBox> soft_nms(const std::vector<DetectionBox>& boxes, const DecayFn& decay, double score_floor) {
  std::vector<DetectionBox> pending = boxes;
  for (const auto& b : pending) check_box(b);
  std::vector<DetectionBox> kept;
  while (!pending.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pending.size(); ++i) {
      if (pending[i].score > pending[best].score) best = i;
    }
    const DetectionBox top = pending[best];
    pending.erase(pending.begin() + static_cast<std::ptrdiff_t>(best));
    kept.push_back(top);
    std::vector<DetectionBox> next;
    next.reserve(pending.size());
    for (auto b : pending) {
      b.score *= decay(iou(top, b));
      if (b.score >= score_floor) next.push_back(b);
    }
    pending = std::move(next);
  }
  return kept;
}

std::vector<DetectionBox> soft_nms(const std::vector<DetectionBox>& boxes, double sigma, double score_floor) {
  return soft_nms(boxes, gaussian_decay(sigma), score_floor);
}

std::vector<DetectionBox> suppress(const std::vector<DetectionBox>& boxes, const NmsOptions& options) {
  std::map<std::pair<std::int64_t, int>, std::vector<DetectionBox>> groups;
  for (const auto& b : boxes) groups[{b.image_id, b.class_id}].push_back(b);
  std::vector<DetectionBox> out;
  for (auto& [key, group] : groups) {
    std::vector<DetectionBox> kept;
    switch (options.kind) {
      case NmsOptions::Kind::kNone: {
        for (std::size_t i : score_order(group)) kept.push_back(group[i]);
        break;
      }
      case NmsOptions::Kind::kHard:
        kept = hard_nms(group, options.iou_threshold);
        break;
      case NmsOptions::Kind::kSoft:
        kept = soft_nms(group, options.sigma, options.score_floor);
        break;
    }
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

std::vector<DetectionBox> select_for_pose(const std::vector<DetectionBox>& boxes, int person_class, std::size_t cap) {
  std::map<std::int64_t, std::vector<DetectionBox>> images;
  for (const auto& b : boxes) images[b.image_id].push_back(b);
  std::vector<DetectionBox> out;
  for (auto& [id, group] : images) {
    const auto order = score_order(group);
    for (std::size_t r = 0; r < order.size() && r < cap; ++r) {
      if (group[order[r]].class_id == person_class) out.push_back(group[order[r]]);
    }
  }
  return out;
}

std::vector<DetectionBox> parse_detections(const std::string& json_text) {
  const auto doc = nlohmann::json::parse(json_text);
  if (!doc.is_array()) throw std::runtime_error("detections: expected a JSON array");
  std::vector<DetectionBox> out;
  for (const auto& item : doc) {
    DetectionBox d;
    d.image_id = item.at("image_id").get<std::int64_t>();
    d.class_id = item.at("category_id").get<int>();
    const auto& bb = item.at("bbox");
    if (!bb.is_array() || bb.size() != 4) throw std::runtime_error("detections: bbox must have 4 numbers");
    d.box = {bb[0].get<double>(), bb[1].get<double>(), bb[2].get<double>(), bb[3].get<double>()};
    d.score = item.at("score").get<double>();
    check_box(d);
    out.push_back(d);
  }
  return out;
}

std::vector<DetectionBox> load_detections(const std::filesystem::path& path) {
  return parse_detections(read_text_file(path));
}

std::string detections_to_json(const std::vector<DetectionBox>& boxes) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& b : boxes) {
    doc.push_back({{"image_id", b.image_id},
                   {"category_id", b.class_id},
                   {"bbox", {b.box.x, b.box.y, b.box.w, b.box.h}},
                   {"score", b.score}});
  }
  return doc.dump(1);
}

}  // namespace cpnkit
