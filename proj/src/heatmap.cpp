#include "cpnkit/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace cpnkit {

HeatmapSpec HeatmapSpec::for_crop(const CropSpec& crop, Index output_stride, double sigma) {
  if (output_stride < 1 || crop.target_height % output_stride != 0 || crop.target_width % output_stride != 0) {
    throw std::invalid_argument("HeatmapSpec: crop " + std::to_string(crop.target_height) + "x" +
                                std::to_string(crop.target_width) + " not divisible by output stride " +
                                std::to_string(output_stride));
  }
  HeatmapSpec spec;
  spec.height = crop.target_height / output_stride;
  spec.width = crop.target_width / output_stride;
  spec.output_stride = output_stride;
  spec.sigma = sigma;
  return spec;
}

Eigen::Vector2d crop_to_heatmap(const Eigen::Vector2d& p, Index output_stride) {
  const double s = static_cast<double>(output_stride);
  return (p.array() - 0.5 * (s - 1.0)).matrix() / s;
}

Eigen::Vector2d heatmap_to_crop(const Eigen::Vector2d& p, Index output_stride) {
  const double s = static_cast<double>(output_stride);
  return (p.array() * s + 0.5 * (s - 1.0)).matrix();
}

template <typename Scalar>
EncodedTarget<Scalar> encode_target(const PersonInstance& instance, const AffineMap& crop_map,
                                    const HeatmapSpec& spec) {
  if (spec.num_keypoints != kNumKeypoints) throw std::invalid_argument("encode_target: expects 17 keypoints");
  if (!(spec.sigma > 0)) throw std::invalid_argument("encode_target: sigma must be positive");
  EncodedTarget<Scalar> target;
  target.stack.output_stride = spec.output_stride;
  target.stack.maps = Grid<Scalar>({spec.num_keypoints, spec.height, spec.width});
  target.annotated.assign(static_cast<std::size_t>(spec.num_keypoints), false);
  const double radius = 3.0 * spec.sigma;
  const double two_var = 2.0 * spec.sigma * spec.sigma;
  for (Index k = 0; k < spec.num_keypoints; ++k) {
    const Keypoint& kp = instance.keypoints[static_cast<std::size_t>(k)];
    if (kp.v <= 0) continue;
    const Eigen::Vector2d h = crop_to_heatmap(crop_map.apply(Eigen::Vector2d(kp.x, kp.y)), spec.output_stride);
    const double cx = std::round(h.x()), cy = std::round(h.y());
    if (cx < 0 || cy < 0 || cx > static_cast<double>(spec.width - 1) || cy > static_cast<double>(spec.height - 1)) {
      continue;
    }
    target.annotated[static_cast<std::size_t>(k)] = true;
    const Index y0 = std::max<Index>(0, static_cast<Index>(std::ceil(h.y() - radius)));
    const Index y1 = std::min<Index>(spec.height - 1, static_cast<Index>(std::floor(h.y() + radius)));
    const Index x0 = std::max<Index>(0, static_cast<Index>(std::ceil(h.x() - radius)));
    const Index x1 = std::min<Index>(spec.width - 1, static_cast<Index>(std::floor(h.x() + radius)));
    for (Index y = y0; y <= y1; ++y) {
      for (Index x = x0; x <= x1; ++x) {
        const double d2 = (static_cast<double>(x) - h.x()) * (static_cast<double>(x) - h.x()) +
                          (static_cast<double>(y) - h.y()) * (static_cast<double>(y) - h.y());
        if (d2 > radius * radius) continue;
        target.stack.maps.at(0, k, y, x) = static_cast<Scalar>(std::exp(-d2 / two_var));
      }
    }
  }
  return target;
}

template <typename Scalar>
HeatmapStack<Scalar> smooth(const HeatmapStack<Scalar>& stack, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("smooth: sigma must be positive");
  const Index radius = static_cast<Index>(std::ceil(2.0 * sigma));
  Eigen::ArrayXd kernel(2 * radius + 1);
  for (Index t = -radius; t <= radius; ++t) kernel[t + radius] = std::exp(-0.5 * static_cast<double>(t * t) / (sigma * sigma));
  kernel /= kernel.sum();

  const Index planes = stack.maps.size() / (stack.height() * stack.width());
  const Index h = stack.height(), w = stack.width();
  HeatmapStack<Scalar> out{Grid<Scalar>(stack.maps.shape()), stack.output_stride};
  Eigen::ArrayXd row_pass(h * w);
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = stack.maps.ptr() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = 0;
        for (Index t = -radius; t <= radius; ++t) {
          acc += kernel[t + radius] * static_cast<double>(src[y * w + std::clamp<Index>(x + t, 0, w - 1)]);
        }
        row_pass[y * w + x] = acc;
      }
    }
    Scalar* dst = out.maps.ptr() + p * h * w;
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        double acc = 0;
        for (Index t = -radius; t <= radius; ++t) acc += kernel[t + radius] * row_pass[std::clamp<Index>(y + t, 0, h - 1) * w + x];
        dst[y * w + x] = static_cast<Scalar>(acc);
      }
    }
  }
  return out;
}

template <typename Scalar>
HeatmapStack<Scalar> unflip(const HeatmapStack<Scalar>& flipped) {
  if (flipped.keypoints() != kNumKeypoints) throw std::invalid_argument("unflip: expects 17 channels");
  const Grid<Scalar> mirrored = flip_horizontal(flipped.maps);
  HeatmapStack<Scalar> out{Grid<Scalar>(flipped.maps.shape()), flipped.output_stride};
  const Index plane = flipped.height() * flipped.width();
  const Index n = flipped.maps.batch();
  for (Index b = 0; b < n; ++b) {
    for (Index k = 0; k < kNumKeypoints; ++k) {
      const Index src = kFlipIndex[static_cast<std::size_t>(k)];
      out.maps.data().segment((b * kNumKeypoints + k) * plane, plane) =
          mirrored.data().segment((b * kNumKeypoints + src) * plane, plane);
    }
  }
  return out;
}

template <typename Scalar>
HeatmapStack<Scalar> flip_average(const HeatmapStack<Scalar>& stack, const HeatmapStack<Scalar>& flipped) {
  if (stack.maps.shape() != flipped.maps.shape()) {
    throw std::invalid_argument("flip_average: shape mismatch " + shape_string(stack.maps.shape()) + " vs " +
                                shape_string(flipped.maps.shape()));
  }
  const HeatmapStack<Scalar> restored = unflip(flipped);
  HeatmapStack<Scalar> out{Grid<Scalar>(stack.maps.shape()), stack.output_stride};
  out.maps.data() = (stack.maps.data() + restored.maps.data()) * Scalar(0.5);
  return out;
}

template <typename Scalar>
std::array<PeakLocation, 2> top_two(const Grid<Scalar>& maps, Index channel) {
  const Index h = maps.height(), w = maps.width();
  const Scalar* plane = maps.ptr() + channel * h * w;
  Index best = 0;
  for (Index i = 1; i < h * w; ++i) {
    if (plane[i] > plane[best]) best = i;
  }
  Index second = best == 0 ? 1 : 0;
  for (Index i = 0; i < h * w; ++i) {
    if (i != best && plane[i] > plane[second]) second = i;
  }
  if (h * w == 1) second = best;
  return {PeakLocation{best / w, best % w, static_cast<double>(plane[best])},
          PeakLocation{second / w, second % w, static_cast<double>(plane[second])}};
}

template <typename Scalar>
Eigen::Vector2d quarter_offset_peak(const Grid<Scalar>& maps, Index channel, double* score) {
  const auto [first, second] = top_two(maps, channel);
  Eigen::Vector2d p(static_cast<double>(first.col), static_cast<double>(first.row));
  if (score) *score = first.value;
  if (second.value > 0 && second.value < first.value) {
    const Eigen::Vector2d q(static_cast<double>(second.col), static_cast<double>(second.row));
    p += 0.25 * (q - p).normalized();
  }
  return p;
}

double rescore(const std::array<PoseKeypoint, kNumKeypoints>& keypoints, double box_score) {
  double sum = 0;
  for (const auto& k : keypoints) sum += k.score;
  return box_score * (sum / static_cast<double>(kNumKeypoints));
}

template <typename Scalar>
PoseResult decode(const HeatmapStack<Scalar>& stack, const AffineMap& crop_map, double box_score) {
  if (stack.maps.rank() != 3 || stack.keypoints() != kNumKeypoints) {
    throw std::invalid_argument("decode: expected 17 x H x W, got " + shape_string(stack.maps.shape()));
  }
  const AffineMap back = invert(crop_map);
  PoseResult result;
  result.box_score = box_score;
  for (Index k = 0; k < kNumKeypoints; ++k) {
    double peak = 0;
    const Eigen::Vector2d h = quarter_offset_peak(stack.maps, k, &peak);
    const Eigen::Vector2d p = back.apply(heatmap_to_crop(h, stack.output_stride));
    result.keypoints[static_cast<std::size_t>(k)] = {p.x(), p.y(), std::clamp(peak, 0.0, 1.0)};
  }
  result.instance_score = rescore(result.keypoints, box_score);
  return result;
}

PersonInstance PoseResult::to_instance(std::int64_t image_id) const {
  PersonInstance out;
  out.image_id = image_id;
  out.score = instance_score;
  double x0 = keypoints[0].x, x1 = x0, y0 = keypoints[0].y, y1 = y0;
  for (std::size_t k = 0; k < keypoints.size(); ++k) {
    out.keypoints[k] = {keypoints[k].x, keypoints[k].y, 1};
    x0 = std::min(x0, keypoints[k].x);
    x1 = std::max(x1, keypoints[k].x);
    y0 = std::min(y0, keypoints[k].y);
    y1 = std::max(y1, keypoints[k].y);
  }
  out.bbox = {x0, y0, x1 - x0, y1 - y0};
  out.area = out.bbox.area();
  return out;
}

#define CPNKIT_INSTANTIATE_HEATMAP(S)                                                                  \
  template EncodedTarget<S> encode_target(const PersonInstance&, const AffineMap&, const HeatmapSpec&); \
  template HeatmapStack<S> smooth(const HeatmapStack<S>&, double);                                     \
  template HeatmapStack<S> unflip(const HeatmapStack<S>&);                                             \
  template HeatmapStack<S> flip_average(const HeatmapStack<S>&, const HeatmapStack<S>&);               \
  template std::array<PeakLocation, 2> top_two(const Grid<S>&, Index);                                  \
  template Eigen::Vector2d quarter_offset_peak(const Grid<S>&, Index, double*);                        \
  template PoseResult decode(const HeatmapStack<S>&, const AffineMap&, double);

CPNKIT_INSTANTIATE_HEATMAP(float)
CPNKIT_INSTANTIATE_HEATMAP(double)

}  // namespace cpnkit
