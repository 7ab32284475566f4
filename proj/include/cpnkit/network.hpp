#pragma once

#include "cpnkit/config.hpp"
#include "cpnkit/grid.hpp"
#include "cpnkit/ops.hpp"
#include "cpnkit/param_store.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cpnkit {

template <typename Scalar>
using Pyramid = std::array<Grid<Scalar>, 4>;  // levels 2..5

template <typename Scalar>
struct GlobalNetResult {
  Pyramid<Scalar> features;  // P2..P5 at their native strides
  Pyramid<Scalar> heatmaps;  // per-level heads upsampled to stride 4
};

/// Heatmaps for one forward pass. Loss code writes gradients into the grad
/// slots of these grids before calling Cpn::backward.
template <typename Scalar>
struct NetworkOutput {
  Pyramid<Scalar> global;
  std::optional<Grid<Scalar>> refined;

  /// The prediction used at test time: RefineNet when present, else the P2 head.
  const Grid<Scalar>& prediction() const { return refined ? *refined : global[0]; }
};

/// Intermediate activations recorded by a forward pass for the backward pass.
template <typename Scalar>
class ForwardCache {
 public:
  ForwardCache();
  ~ForwardCache();
  ForwardCache(ForwardCache&&) noexcept;
  ForwardCache& operator=(ForwardCache&&) noexcept;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  std::unique_ptr<Impl> impl_;
};

/// Cascaded pyramid network: residual backbone, GlobalNet pyramid with
/// per-level heads, RefineNet with per-level bottleneck stacks and a
/// concatenated refinement head.
///
/// The object only holds the architecture; parameters live in a ParamStore
/// so one model can serve concurrent eval-mode forwards.
template <typename Scalar>
class Cpn {
 public:
  explicit Cpn(ModelConfig config);
  ~Cpn();
  Cpn(const Cpn&);
  Cpn& operator=(const Cpn&);

  const ModelConfig& config() const { return config_; }

  ParamStore<Scalar> init_params(std::uint64_t seed) const;

  Pyramid<Scalar> backbone_forward(const ParamStore<Scalar>& params, const Grid<Scalar>& images, Mode mode,
                                   ForwardCache<Scalar>* cache = nullptr) const;
  GlobalNetResult<Scalar> globalnet_forward(const ParamStore<Scalar>& params, const Pyramid<Scalar>& features,
                                            Mode mode, ForwardCache<Scalar>* cache = nullptr) const;
  Grid<Scalar> refinenet_forward(const ParamStore<Scalar>& params, const Pyramid<Scalar>& pyramid, Mode mode,
                                 ForwardCache<Scalar>* cache = nullptr) const;

  /// images: N x 3 x crop_h x crop_w.
  NetworkOutput<Scalar> forward(const ParamStore<Scalar>& params, const Grid<Scalar>& images, Mode mode,
                                ForwardCache<Scalar>* cache = nullptr) const;

  /// Accumulates parameter gradients from the grad slots of `output`
  /// (missing slots count as zero).
  void backward(ParamStore<Scalar>& params, ForwardCache<Scalar>& cache, const NetworkOutput<Scalar>& output) const;

  /// Writes the batchnorm running statistics gathered by a train-mode forward.
  static void commit_running_stats(ParamStore<Scalar>& params, const ForwardCache<Scalar>& cache);

  struct Layout;

 private:
  ModelConfig config_;
  std::unique_ptr<Layout> layout_;
};

/// Closed-form trainable parameter count (conv weights/biases, batchnorm scale/shift).
std::int64_t count_params(const ModelConfig& config);
/// Closed-form convolution FLOPs (2 per multiply-accumulate) for one crop.
std::int64_t count_flops(const ModelConfig& config, Index input_height, Index input_width);

/// One-line architecture summary used in training logs.
std::string describe_architecture(const ModelConfig& config);

extern template class Cpn<float>;
extern template class Cpn<double>;

}  // namespace cpnkit
