#include "cpnkit/loss.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace cpnkit {

namespace {

void check_mask(std::size_t channels, const KeypointMask& annotated, const char* where) {
  if (annotated.size() != channels) {
    throw std::invalid_argument(std::string(where) + ": mask has " + std::to_string(annotated.size()) +
                                " entries for " + std::to_string(channels) + " keypoints");
  }
}

double mean_of(std::span<const double> per_keypoint, const std::vector<int>& indices) {
  if (indices.empty()) return 0.0;
  double sum = 0;
  for (int k : indices) sum += per_keypoint[static_cast<std::size_t>(k)];
  return sum / static_cast<double>(indices.size());
}

}  // namespace

template <typename Scalar>
std::vector<double> per_keypoint_l2(const Grid<Scalar>& pred, const Grid<Scalar>& target, const KeypointMask& annotated) {
  if (pred.shape() != target.shape() || pred.rank() != 3) {
    throw std::invalid_argument("per_keypoint_l2: expected matching K x H x W maps, got " + shape_string(pred.shape()) +
                                " and " + shape_string(target.shape()));
  }
  const auto k = static_cast<std::size_t>(pred.channels());
  check_mask(k, annotated, "per_keypoint_l2");
  const Index plane = pred.height() * pred.width();
  std::vector<double> out(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    if (!annotated[c]) continue;
    const Index off = static_cast<Index>(c) * plane;
    double sum = 0;
    for (Index i = 0; i < plane; ++i) {
      const double d = static_cast<double>(pred[off + i]) - static_cast<double>(target[off + i]);
      sum += d * d;
    }
    out[c] = sum / static_cast<double>(plane);
  }
  return out;
}

double plain_loss(std::span<const double> per_keypoint, const KeypointMask& annotated) {
  check_mask(per_keypoint.size(), annotated, "plain_loss");
  std::vector<int> all;
  for (std::size_t k = 0; k < annotated.size(); ++k) {
    if (annotated[k]) all.push_back(static_cast<int>(k));
  }
  return mean_of(per_keypoint, all);
}

std::vector<int> select_hard_keypoints(std::span<const double> per_keypoint, const KeypointMask& annotated,
                                       int hard_keypoints) {
  check_mask(per_keypoint.size(), annotated, "select_hard_keypoints");
  if (hard_keypoints < 1) throw std::invalid_argument("select_hard_keypoints: M must be at least 1");
  std::vector<int> candidates;
  for (std::size_t k = 0; k < annotated.size(); ++k) {
    if (annotated[k]) candidates.push_back(static_cast<int>(k));
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return per_keypoint[static_cast<std::size_t>(a)] > per_keypoint[static_cast<std::size_t>(b)];
  });
  if (candidates.size() > static_cast<std::size_t>(hard_keypoints)) candidates.resize(static_cast<std::size_t>(hard_keypoints));
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

OhkmResult ohkm_loss(std::span<const double> per_keypoint, const KeypointMask& annotated, int hard_keypoints) {
  OhkmResult r;
  r.selected = select_hard_keypoints(per_keypoint, annotated, hard_keypoints);
  r.loss = mean_of(per_keypoint, r.selected);
  return r;
}

template <typename Scalar>
InstanceLoss heatmap_loss(const Grid<Scalar>& pred, const Grid<Scalar>& target, const KeypointMask& annotated,
                          LossKind kind, int hard_keypoints, typename Grid<Scalar>::Array* grad,
                          const std::vector<int>* fixed_selection) {
  InstanceLoss r;
  if (grad) *grad = Grid<Scalar>::Array::Zero(pred.size());
  if (kind == LossKind::kNone) return r;
  const std::vector<double> per_k = per_keypoint_l2(pred, target, annotated);
  if (fixed_selection) {
    r.selected = *fixed_selection;
    std::sort(r.selected.begin(), r.selected.end());
  } else if (kind == LossKind::kOhkm) {
    r.selected = select_hard_keypoints(per_k, annotated, hard_keypoints);
  } else {
    for (std::size_t k = 0; k < annotated.size(); ++k) {
      if (annotated[k]) r.selected.push_back(static_cast<int>(k));
    }
  }
  r.loss = mean_of(per_k, r.selected);
  if (grad && !r.selected.empty()) {
    const Index plane = pred.height() * pred.width();
    const double scale = 2.0 / (static_cast<double>(r.selected.size()) * static_cast<double>(plane));
    for (int k : r.selected) {
      const Index off = k * plane;
      grad->segment(off, plane) =
          ((pred.data().segment(off, plane) - target.data().segment(off, plane)) * static_cast<Scalar>(scale));
    }
  }
  return r;
}

template <typename Scalar>
LossBreakdown total_loss(NetworkOutput<Scalar>& output, const Grid<Scalar>& targets,
                         const std::vector<KeypointMask>& annotated, const LossConfig& config, bool write_grads) {
  config.validate();
  const Index n = targets.batch();
  if (targets.rank() != 4 || static_cast<Index>(annotated.size()) != n) {
    throw std::invalid_argument("total_loss: targets " + shape_string(targets.shape()) + " with " +
                                std::to_string(annotated.size()) + " masks");
  }
  using Array = typename Grid<Scalar>::Array;
  const Index item = targets.size() / n;
  LossBreakdown out;

  auto head_term = [&](Grid<Scalar>& pred, LossKind kind, std::vector<std::vector<int>>* selected) {
    if (pred.shape() != targets.shape()) {
      throw std::invalid_argument("total_loss: prediction " + shape_string(pred.shape()) + " vs target " +
                                  shape_string(targets.shape()));
    }
    if (kind == LossKind::kNone) return 0.0;
    Array g = write_grads ? Array(Array::Zero(pred.size())) : Array();
    double sum = 0;
    for (Index b = 0; b < n; ++b) {
      const Grid<Scalar> p = batch_item(pred, b);
      const Grid<Scalar> t = batch_item(targets, b);
      Array gi;
      InstanceLoss l = heatmap_loss(p, t, annotated[static_cast<std::size_t>(b)], kind, config.hard_keypoints,
                                    write_grads ? &gi : nullptr);
      sum += l.loss;
      if (write_grads) g.segment(b * item, item) = gi / static_cast<Scalar>(n);
      if (selected) selected->push_back(std::move(l.selected));
    }
    if (write_grads) pred.set_grad(std::move(g));
    return sum / static_cast<double>(n);
  };

  for (std::size_t i = 0; i < 4; ++i) {
    out.global[i] = head_term(output.global[i], config.global_loss, nullptr);
    out.total += out.global[i];
  }
  if (output.refined) {
    out.refine = head_term(*output.refined, config.refine_loss, &out.refine_selected);
    out.total += out.refine;
  }
  return out;
}

#define CPNKIT_INSTANTIATE_LOSS(S)                                                                              \
  template std::vector<double> per_keypoint_l2(const Grid<S>&, const Grid<S>&, const KeypointMask&);          \
  template InstanceLoss heatmap_loss(const Grid<S>&, const Grid<S>&, const KeypointMask&, LossKind, int,       \
                                     Grid<S>::Array*, const std::vector<int>*);                               \
  template LossBreakdown total_loss(NetworkOutput<S>&, const Grid<S>&, const std::vector<KeypointMask>&, \
                                    const LossConfig&, bool);

CPNKIT_INSTANTIATE_LOSS(float)
CPNKIT_INSTANTIATE_LOSS(double)

}  // namespace cpnkit
