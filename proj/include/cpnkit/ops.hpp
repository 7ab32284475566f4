#pragma once

#include "cpnkit/grid.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace cpnkit {

enum class Mode { kTrain, kEval };

// Forward ops are pure: they read their inputs and return a fresh grid.
// Backward ops read the upstream gradient from the output's grad slot and
// accumulate into the grad slots of the inputs (created on first use).

template <typename Scalar>
Grid<Scalar> conv2d(const Grid<Scalar>& input, const Grid<Scalar>& kernel, const Grid<Scalar>* bias, Index stride,
                    Index padding);

/// `propagate_input = false` skips the input gradient (first layer of a net).
template <typename Scalar>
void conv2d_backward(Grid<Scalar>& input, Grid<Scalar>& kernel, Grid<Scalar>* bias, const Grid<Scalar>& output,
                     Index stride, Index padding, bool propagate_input = true);

/// Running multiply-accumulate count of conv2d forwards on this thread.
std::uint64_t conv_macs();
void reset_conv_macs();

/// Opt-in fingerprint of relu and maxpool branch decisions on this thread.
/// Two evaluations with equal signatures took the same piecewise-linear branch,
/// so a finite difference between them does not straddle a kink.
void set_branch_tracing(bool enabled);
std::uint64_t branch_signature();
void reset_branch_signature();

template <typename Scalar>
struct RunningStats {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> var;

  static RunningStats identity(Index channels) {
    return {Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(channels),
            Eigen::Array<Scalar, Eigen::Dynamic, 1>::Ones(channels)};
  }
};

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.9;  // weight kept on the previous running value
};

template <typename Scalar>
struct BatchNormCache {
  Mode mode = Mode::kEval;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> inv_std;
  Grid<Scalar> normalized;
};

/// Per-channel normalisation over batch and spatial positions. Train mode
/// uses batch statistics and folds them into `stats`; eval mode reads `stats`.
template <typename Scalar>
Grid<Scalar> batchnorm(const Grid<Scalar>& input, const Grid<Scalar>& scale, const Grid<Scalar>& shift,
                       RunningStats<Scalar>& stats, Mode mode, BatchNormCache<Scalar>* cache = nullptr,
                       const BatchNormOptions& options = {});

template <typename Scalar>
void batchnorm_backward(Grid<Scalar>& input, Grid<Scalar>& scale, Grid<Scalar>& shift, const Grid<Scalar>& output,
                        const BatchNormCache<Scalar>& cache);

template <typename Scalar>
Grid<Scalar> upsample_nearest(const Grid<Scalar>& input, Index factor);

template <typename Scalar>
void upsample_nearest_backward(Grid<Scalar>& input, const Grid<Scalar>& output, Index factor);

template <typename Scalar>
Grid<Scalar> relu(const Grid<Scalar>& input);

template <typename Scalar>
void relu_backward(Grid<Scalar>& input, const Grid<Scalar>& output);

template <typename Scalar>
Grid<Scalar> add(const Grid<Scalar>& a, const Grid<Scalar>& b);

template <typename Scalar>
void add_backward(Grid<Scalar>& a, Grid<Scalar>& b, const Grid<Scalar>& output);

template <typename Scalar>
Grid<Scalar> concat_channels(std::span<const Grid<Scalar>* const> parts);

template <typename Scalar>
void concat_channels_backward(std::span<Grid<Scalar>* const> parts, const Grid<Scalar>& output);

template <typename Scalar>
struct MaxPoolCache {
  std::vector<Index> argmax;  // flat input index per output cell
};

template <typename Scalar>
Grid<Scalar> maxpool(const Grid<Scalar>& input, Index kernel, Index stride, MaxPoolCache<Scalar>* cache = nullptr);

template <typename Scalar>
void maxpool_backward(Grid<Scalar>& input, const Grid<Scalar>& output, const MaxPoolCache<Scalar>& cache);

}  // namespace cpnkit
