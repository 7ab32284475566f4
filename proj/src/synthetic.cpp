#include "cpnkit/synthetic.hpp"

#include "cpnkit/boxes.hpp"
#include "cpnkit/config.hpp"
#include "cpnkit/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

namespace cpnkit {

void SyntheticSpec::validate() const {
  if (image_width < 32 || image_height < 32) throw std::invalid_argument("synthetic: image too small");
  if (min_persons < 1 || max_persons < min_persons) throw std::invalid_argument("synthetic: bad person count range");
  if (!(min_person_height > 8) || max_person_height < min_person_height) {
    throw std::invalid_argument("synthetic: bad person height range");
  }
  if (max_person_height > image_height) throw std::invalid_argument("synthetic: persons taller than the image");
  if (box_jitter < 0 || score_noise < 0 || duplicate_rate < 0 || duplicate_rate > 1 || clutter_boxes < 0) {
    throw std::invalid_argument("synthetic: detection noise parameters must be non-negative");
  }
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Joint colours shared by left/right pairs, so a mirrored figure is still a
// valid figure: nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles.
constexpr std::array<Rgb, 9> kJointColors = {{{1.0f, 1.0f, 1.0f},
                                              {0.1f, 0.1f, 0.1f},
                                              {0.9f, 0.6f, 0.1f},
                                              {1.0f, 0.2f, 0.2f},
                                              {0.2f, 1.0f, 0.2f},
                                              {0.2f, 0.4f, 1.0f},
                                              {1.0f, 1.0f, 0.1f},
                                              {1.0f, 0.2f, 1.0f},
                                              {0.1f, 1.0f, 1.0f}}};
constexpr Rgb kHeadColor = {0.95f, 0.8f, 0.65f};

int joint_group(int k) { return k == 0 ? 0 : (k + 1) / 2; }

Rgb limb_color(int a, int b, float shade) {
  const Rgb& ca = kJointColors[static_cast<std::size_t>(joint_group(a))];
  const Rgb& cb = kJointColors[static_cast<std::size_t>(joint_group(b))];
  return {shade * 0.5f * (ca[0] + cb[0]), shade * 0.5f * (ca[1] + cb[1]), shade * 0.5f * (ca[2] + cb[2])};
}

bool is_face(int k) { return k <= 4; }

struct Figure {
  std::array<Eigen::Vector2d, kNumKeypoints> joints;
  double height = 0;
  Box extent;  // unclipped
};

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

Figure sample_figure(std::mt19937_64& rng, const SyntheticSpec& spec) {
  // Unit-height template, pelvis at the origin, y down; the figure faces the
  // camera so its left joints sit at +x.
  std::array<Eigen::Vector2d, kNumKeypoints> p;
  const double turn = uniform(rng, -0.012, 0.012);
  p[0] = {turn, -0.40};
  p[1] = p[0] + Eigen::Vector2d(0.03, -0.025);
  p[2] = p[0] + Eigen::Vector2d(-0.03, -0.025);
  p[3] = p[0] + Eigen::Vector2d(0.06, -0.01);
  p[4] = p[0] + Eigen::Vector2d(-0.06, -0.01);
  const double shoulder_y = -0.30 + uniform(rng, -0.01, 0.01);
  p[5] = {0.10, shoulder_y};
  p[6] = {-0.10, shoulder_y};
  p[11] = {0.065, 0.0};
  p[12] = {-0.065, 0.0};
  for (int side = 0; side < 2; ++side) {
    const double dir = side == 0 ? 1.0 : -1.0;
    const auto s = static_cast<std::size_t>(side);
    const double a1 = uniform(rng, -15.0, 150.0) * kDeg;
    const double a2 = a1 + uniform(rng, -20.0, 110.0) * kDeg;
    p[7 + s] = p[5 + s] + 0.16 * Eigen::Vector2d(dir * std::sin(a1), std::cos(a1));
    p[9 + s] = p[7 + s] + 0.15 * Eigen::Vector2d(dir * std::sin(a2), std::cos(a2));
    const double b1 = uniform(rng, -5.0, 30.0) * kDeg;
    const double b2 = b1 + uniform(rng, -25.0, 15.0) * kDeg;
    p[13 + s] = p[11 + s] + 0.24 * Eigen::Vector2d(dir * std::sin(b1), std::cos(b1));
    p[15 + s] = p[13 + s] + 0.24 * Eigen::Vector2d(dir * std::sin(b2), std::cos(b2));
  }
  Figure f;
  f.height = uniform(rng, spec.min_person_height, spec.max_person_height);
  const double tilt = uniform(rng, -spec.max_tilt_deg, spec.max_tilt_deg) * kDeg;
  Eigen::Matrix2d rot;
  rot << std::cos(tilt), -std::sin(tilt), std::sin(tilt), std::cos(tilt);
  for (std::size_t k = 0; k < kNumKeypoints; ++k) f.joints[k] = f.height * (rot * p[k]);

  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  for (const auto& j : f.joints) {
    x0 = std::min(x0, j.x());
    y0 = std::min(y0, j.y());
    x1 = std::max(x1, j.x());
    y1 = std::max(y1, j.y());
  }
  const double margin = 0.08 * f.height;  // head disk and limb width
  f.extent = {x0 - margin, y0 - margin, x1 - x0 + 2 * margin, y1 - y0 + 2 * margin};
  return f;
}

void translate(Figure& f, const Eigen::Vector2d& by) {
  for (auto& j : f.joints) j += by;
  f.extent.x += by.x();
  f.extent.y += by.y();
}

Box clip_box(const Box& b, double width, double height) {
  const double x0 = std::clamp(b.x, 0.0, width - 1), y0 = std::clamp(b.y, 0.0, height - 1);
  const double x1 = std::clamp(b.x + b.w, 0.0, width - 1), y1 = std::clamp(b.y + b.h, 0.0, height - 1);
  return {x0, y0, x1 - x0, y1 - y0};
}

Image background(std::mt19937_64& rng, int width, int height) {
  Image img({3, static_cast<Index>(height), static_cast<Index>(width)});
  for (Index c = 0; c < 3; ++c) {
    const double base = uniform(rng, 0.25, 0.45);
    std::array<std::array<double, 4>, 3> waves{};
    for (auto& w : waves) w = {uniform(rng, -0.08, 0.08), uniform(rng, -0.08, 0.08), uniform(rng, 0, 6.3), uniform(rng, 0.04, 0.1)};
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) {
        double v = base;
        for (const auto& w : waves) v += w[3] * std::sin(w[0] * static_cast<double>(x) + w[1] * static_cast<double>(y) + w[2]);
        img.at(0, c, y, x) = static_cast<float>(v);
      }
    }
  }
  std::uniform_real_distribution<float> grain(-0.03f, 0.03f);
  for (Index i = 0; i < img.size(); ++i) img[i] += grain(rng);
  return img;
}

void draw_pixels(Image& img, std::vector<int>& owner, int person, const std::vector<std::pair<Index, Index>>& pixels,
                 const Rgb& color) {
  paint(img, pixels, color);
  for (const auto& [x, y] : pixels) owner[static_cast<std::size_t>(y * img.width() + x)] = person;
}

DetectionBox jitter_box(std::mt19937_64& rng, const Box& b, double jitter, std::int64_t image_id, double score) {
  DetectionBox d;
  d.image_id = image_id;
  d.class_id = kPersonCategory;
  d.box = {b.x + uniform(rng, -jitter, jitter) * b.w, b.y + uniform(rng, -jitter, jitter) * b.h,
           b.w * (1.0 + uniform(rng, -jitter, jitter)), b.h * (1.0 + uniform(rng, -jitter, jitter))};
  d.score = std::clamp(score, 0.001, 1.0);
  return d;
}

SyntheticScene make_scene(std::int64_t id, const SyntheticSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double width = spec.image_width, height = spec.image_height;
  SyntheticScene scene;
  scene.record = {id, "images/" + std::to_string(id) + ".png", spec.image_width, spec.image_height};
  scene.image = background(rng, spec.image_width, spec.image_height);

  const int want = std::uniform_int_distribution<int>(spec.min_persons, spec.max_persons)(rng);
  std::vector<Figure> figures;
  for (int attempt = 0; attempt < 200 && static_cast<int>(figures.size()) < want; ++attempt) {
    Figure f = sample_figure(rng, spec);
    const double cx = uniform(rng, 0.05 * width, 0.95 * width);
    const double cy = uniform(rng, -f.extent.y - 0.05 * f.extent.h, height - (f.extent.y + f.extent.h) + 0.05 * f.extent.h);
    translate(f, {cx, cy});
    if (!spec.allow_occlusion) {
      const bool overlaps = std::any_of(figures.begin(), figures.end(), [&](const Figure& g) { return iou(f.extent, g.extent) > 0; });
      if (overlaps) continue;
    }
    figures.push_back(f);
  }

  std::vector<int> owner(static_cast<std::size_t>(spec.image_width * spec.image_height), -1);
  const Index ih = spec.image_height, iw = spec.image_width;
  for (std::size_t p = 0; p < figures.size(); ++p) {
    const Figure& f = figures[p];
    const int pi = static_cast<int>(p);
    const float shade = static_cast<float>(uniform(rng, 0.75, 1.0));
    const Eigen::Vector2d head = f.joints[0] + f.height * Eigen::Vector2d(0, -0.015);
    draw_pixels(scene.image, owner, pi, disk_pixels(head, 0.065 * f.height, ih, iw), kHeadColor);
    for (auto [a, b] : kSkeleton) {
      const double half = (is_face(a) && is_face(b) ? 0.008 : 0.022) * f.height;
      const auto& ja = f.joints[static_cast<std::size_t>(a)];
      const auto& jb = f.joints[static_cast<std::size_t>(b)];
      draw_pixels(scene.image, owner, pi, segment_pixels(ja, jb, half, ih, iw), limb_color(a, b, shade));
      scene.limbs.push_back({pi, a, b, ja, jb});
    }
    for (int k = 0; k < kNumKeypoints; ++k) {
      const double r = (is_face(k) ? 0.014 : 0.03) * f.height;
      draw_pixels(scene.image, owner, pi, disk_pixels(f.joints[static_cast<std::size_t>(k)], r, ih, iw),
                  kJointColors[static_cast<std::size_t>(joint_group(k))]);
    }
  }
  // 8-bit quantisation so the in-memory scene equals its PNG round trip.
  for (Index i = 0; i < scene.image.size(); ++i) {
    scene.image[i] = static_cast<float>(std::lround(std::clamp(scene.image[i], 0.0f, 1.0f) * 255.0f)) / 255.0f;
  }

  for (std::size_t p = 0; p < figures.size(); ++p) {
    const Figure& f = figures[p];
    PersonInstance inst;
    inst.image_id = id;
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
      const Eigen::Vector2d& j = f.joints[k];
      if (j.x() < 0 || j.y() < 0 || j.x() > width - 1 || j.y() > height - 1) {
        inst.keypoints[k] = {0, 0, 0};
        continue;
      }
      const auto px = static_cast<Index>(std::lround(j.x())), py = static_cast<Index>(std::lround(j.y()));
      const bool covered = owner[static_cast<std::size_t>(py * iw + px)] != static_cast<int>(p);
      inst.keypoints[k] = {j.x(), j.y(), covered ? 1 : 2};
    }
    inst.bbox = clip_box(f.extent, width, height);
    inst.area = inst.bbox.area();
    if (inst.labeled_count() == 0 || !(inst.bbox.w > 1) || !(inst.bbox.h > 1)) continue;
    scene.persons.push_back(inst);
  }
  std::int64_t next = id * 100;
  for (auto& inst : scene.persons) inst.id = next++;

  for (const auto& inst : scene.persons) {
    const double score = 0.95 - uniform(rng, 0.0, spec.score_noise);
    scene.detections.push_back(jitter_box(rng, inst.bbox, spec.box_jitter, id, score));
    if (uniform(rng, 0, 1) < spec.duplicate_rate) {
      scene.detections.push_back(jitter_box(rng, inst.bbox, 2 * spec.box_jitter, id, score - uniform(rng, 0.05, 0.3)));
    }
  }
  for (int c = 0; c < spec.clutter_boxes; ++c) {
    DetectionBox d;
    d.image_id = id;
    d.class_id = std::uniform_int_distribution<int>(2, 80)(rng);
    const double w = uniform(rng, 0.05, 0.4) * width, h = uniform(rng, 0.05, 0.4) * height;
    d.box = {uniform(rng, 0, width - w), uniform(rng, 0, height - h), w, h};
    d.score = uniform(rng, 0.05, 0.9);
    scene.detections.push_back(d);
  }
  return scene;
}

}  // namespace

std::vector<SyntheticScene> generate_synthetic(int n_scenes, const SyntheticSpec& spec, std::uint64_t seed) {
  if (n_scenes < 1) throw std::invalid_argument("generate_synthetic: need at least one scene");
  spec.validate();
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(n_scenes));
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  std::vector<std::uint32_t> words(seeds.size() * 2);
  seq.generate(words.begin(), words.end());
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = (std::uint64_t{words[2 * i]} << 32) | words[2 * i + 1];
  std::vector<SyntheticScene> scenes(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) { scenes[i] = make_scene(static_cast<std::int64_t>(i + 1), spec, seeds[i]); });
  return scenes;
}

void write_synthetic(const std::filesystem::path& dir, const std::vector<SyntheticScene>& scenes) {
  std::filesystem::create_directories(dir / "images");
  KeypointDataset ds;
  std::vector<DetectionBox> dets;
  for (const auto& s : scenes) {
    ds.images.push_back(s.record);
    ds.annotations.insert(ds.annotations.end(), s.persons.begin(), s.persons.end());
    dets.insert(dets.end(), s.detections.begin(), s.detections.end());
  }
  parallel_for(scenes.size(), [&](std::size_t i) { write_png(dir / scenes[i].record.file_name, scenes[i].image); });
  write_text_file(dir / "annotations.json", keypoint_dataset_to_json(ds));
  write_text_file(dir / "detections.json", detections_to_json(dets));
}

LoadedDataset load_dataset(const std::filesystem::path& dir) {
  LoadedDataset out;
  out.annotations = load_keypoint_dataset(dir / "annotations.json");
  out.images.resize(out.annotations.images.size());
  parallel_for(out.images.size(), [&](std::size_t i) { out.images[i] = read_image(dir / out.annotations.images[i].file_name); });
  if (std::filesystem::exists(dir / "detections.json")) out.detections = load_detections(dir / "detections.json");
  return out;
}

}  // namespace cpnkit
