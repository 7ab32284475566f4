#pragma once

#include "cpnkit/config.hpp"
#include "cpnkit/heatmap.hpp"
#include "cpnkit/network.hpp"

#include <array>
#include <span>
#include <vector>

namespace cpnkit {

/// Spatial mean of squared differences per channel of K x H x W maps.
/// Unannotated channels report 0.
template <typename Scalar>
std::vector<double> per_keypoint_l2(const Grid<Scalar>& pred, const Grid<Scalar>& target, const KeypointMask& annotated);

/// Mean over annotated keypoints, summed in index order; 0 when none are annotated.
double plain_loss(std::span<const double> per_keypoint, const KeypointMask& annotated);

struct OhkmResult {
  double loss = 0;
  std::vector<int> selected;  // ascending keypoint index
};

/// The `hard_keypoints` largest annotated losses (ties to the lower index),
/// or every annotated keypoint when fewer are available.
std::vector<int> select_hard_keypoints(std::span<const double> per_keypoint, const KeypointMask& annotated,
                                       int hard_keypoints);

/// Mean over the selected keypoints, summed in index order.
OhkmResult ohkm_loss(std::span<const double> per_keypoint, const KeypointMask& annotated, int hard_keypoints);

struct InstanceLoss {
  double loss = 0;
  std::vector<int> selected;
};

/// One instance, one head. With `grad` set, writes dLoss/dpred (zero outside
/// the selected channels). `fixed_selection` bypasses the online selection.
template <typename Scalar>
InstanceLoss heatmap_loss(const Grid<Scalar>& pred, const Grid<Scalar>& target, const KeypointMask& annotated,
                          LossKind kind, int hard_keypoints, typename Grid<Scalar>::Array* grad = nullptr,
                          const std::vector<int>* fixed_selection = nullptr);

struct LossBreakdown {
  double total = 0;
  std::array<double, 4> global{};  // P2..P5 terms, batch means
  double refine = 0;
  std::vector<std::vector<int>> refine_selected;  // per instance
};

/// Sum of the GlobalNet level terms and the RefineNet term, each averaged
/// over the batch. targets: N x K x H x W. With `write_grads`, the gradient
/// of the total is stored in the grad slots of `output`.
template <typename Scalar>
LossBreakdown total_loss(NetworkOutput<Scalar>& output, const Grid<Scalar>& targets,
                         const std::vector<KeypointMask>& annotated, const LossConfig& config, bool write_grads);

}  // namespace cpnkit
