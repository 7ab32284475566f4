#include "cpnkit/network.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cpnkit {

namespace {

struct ConvUnit {
  std::string name;
  Index in = 0, out = 0, kernel = 1, stride = 1, padding = 0;
  bool bias = false;
  bool batchnorm = false;
  bool relu = false;
  double init_std = 0;  // 0: He initialisation
};

struct ResidualBlock {
  std::vector<ConvUnit> path;  // last unit has no relu
  std::optional<ConvUnit> projection;
};

ConvUnit conv_bn(std::string name, Index in, Index out, Index kernel, Index stride, bool relu) {
  return {std::move(name), in, out, kernel, stride, kernel / 2, false, true, relu, 0};
}

ConvUnit plain_conv(std::string name, Index in, Index out, Index kernel, double init_std = 0) {
  return {std::move(name), in, out, kernel, 1, kernel / 2, true, false, false, init_std};
}

ResidualBlock basic_block(const std::string& name, Index in, Index out, Index stride) {
  ResidualBlock b;
  b.path.push_back(conv_bn(name + ".conv1", in, out, 3, stride, true));
  b.path.push_back(conv_bn(name + ".conv2", out, out, 3, 1, false));
  if (in != out || stride != 1) b.projection = conv_bn(name + ".proj", in, out, 1, stride, false);
  return b;
}

ResidualBlock bottleneck(const std::string& name, Index in, Index out) {
  const Index mid = out / 2;
  ResidualBlock b;
  b.path.push_back(conv_bn(name + ".reduce", in, mid, 1, 1, true));
  b.path.push_back(conv_bn(name + ".conv", mid, mid, 3, 1, true));
  b.path.push_back(conv_bn(name + ".expand", mid, out, 1, 1, false));
  if (in != out) b.projection = conv_bn(name + ".proj", in, out, 1, 1, false);
  return b;
}

constexpr double kHeadInitStd = 1e-3;

}  // namespace

template <typename Scalar>
struct Cpn<Scalar>::Layout {
  ConvUnit stem;
  std::array<std::vector<ResidualBlock>, 4> stages;
  std::array<ConvUnit, 4> lateral;
  std::array<ConvUnit, 3> topdown;  // applied to P(i+1) before the sum into P(i)
  std::array<ConvUnit, 4> global_head;
  std::array<std::vector<ResidualBlock>, 4> refine_levels;
  std::optional<ResidualBlock> refine_final;
  std::optional<ConvUnit> refine_head;

  explicit Layout(const ModelConfig& c) {
    const auto& w = c.backbone_widths;
    const Index lat = c.lateral_channels;
    const Index k = c.num_keypoints;
    stem = conv_bn("backbone.stem", 3, w[0], 3, 2, true);
    for (std::size_t s = 0; s < 4; ++s) {
      for (Index b = 0; b < c.blocks_per_stage; ++b) {
        const Index in = b == 0 ? (s == 0 ? w[0] : w[s - 1]) : w[s];
        const Index stride = (b == 0 && s > 0) ? 2 : 1;
        stages[s].push_back(
            basic_block("backbone.stage" + std::to_string(s + 2) + ".block" + std::to_string(b), in, w[s], stride));
      }
    }
    for (std::size_t i = 0; i < 4; ++i) {
      const std::string level = std::to_string(i + 2);
      lateral[i] = plain_conv("global.lateral" + level, w[i], lat, 1);
      global_head[i] = plain_conv("global.head" + level, lat, k, 3, kHeadInitStd);
      if (i < 3) topdown[i] = plain_conv("global.topdown" + level, lat, lat, 1);
    }
    if (c.refine_enabled) {
      for (std::size_t i = 0; i < static_cast<std::size_t>(c.refine_levels); ++i) {
        for (Index b = 0; b < c.refine_blocks[i]; ++b) {
          refine_levels[i].push_back(
              bottleneck("refine.level" + std::to_string(i + 2) + ".block" + std::to_string(b), lat, lat));
        }
      }
      refine_final = bottleneck("refine.final", c.refine_levels * lat, lat);
      refine_head = plain_conv("refine.head", lat, k, 3, kHeadInitStd);
    }
  }
};

namespace {

template <typename Scalar>
struct ConvUnitCache {
  Grid<Scalar> input;
  Grid<Scalar> conv;
  Grid<Scalar> normalized;  // batchnorm output
  Grid<Scalar> output;      // relu output
  BatchNormCache<Scalar> bn;
};

template <typename Scalar>
struct BlockCache {
  std::vector<ConvUnitCache<Scalar>> path;
  std::optional<ConvUnitCache<Scalar>> projection;
  Grid<Scalar> input;
  Grid<Scalar> sum;
  Grid<Scalar> output;
};

template <typename Scalar>
struct StatsUpdate {
  std::string name;
  RunningStats<Scalar> stats;
};

template <typename Scalar>
struct Recorder {
  std::vector<StatsUpdate<Scalar>>* updates = nullptr;
};

template <typename Scalar>
RunningStats<Scalar> load_stats(const ParamStore<Scalar>& params, const std::string& name) {
  return {params.at(name + ".running_mean").data(), params.at(name + ".running_var").data()};
}

template <typename Scalar>
Grid<Scalar> unit_forward(const ConvUnit& u, const ParamStore<Scalar>& params, const Grid<Scalar>& x, Mode mode,
                          ConvUnitCache<Scalar>* cache, std::vector<StatsUpdate<Scalar>>* updates) {
  const Grid<Scalar>* bias = u.bias ? &params.at(u.name + ".bias") : nullptr;
  Grid<Scalar> y = conv2d(x, params.at(u.name + ".weight"), bias, u.stride, u.padding);
  Grid<Scalar> conv_out;
  if (u.batchnorm) {
    RunningStats<Scalar> stats = load_stats(params, u.name + ".bn");
    BatchNormCache<Scalar>* bn_cache = cache ? &cache->bn : nullptr;
    Grid<Scalar> n = batchnorm(y, params.at(u.name + ".bn.scale"), params.at(u.name + ".bn.shift"), stats, mode, bn_cache);
    if (mode == Mode::kTrain && updates) updates->push_back({u.name + ".bn", std::move(stats)});
    conv_out = std::move(y);
    y = std::move(n);
  }
  Grid<Scalar> out = u.relu ? relu(y) : y;
  if (cache) {
    cache->input = x;
    if (u.batchnorm) {
      cache->conv = std::move(conv_out);
      cache->normalized = std::move(y);
    } else {
      cache->conv = std::move(y);
    }
    if (u.relu) cache->output = out;
  }
  return out;
}

template <typename Scalar>
Grid<Scalar> unit_backward(const ConvUnit& u, ParamStore<Scalar>& params, ConvUnitCache<Scalar>& c,
                           const typename Grid<Scalar>::Array& dy, bool propagate_input = true) {
  Grid<Scalar>& pre_relu = u.batchnorm ? c.normalized : c.conv;
  if (u.relu) {
    c.output.set_grad(dy);
    relu_backward(pre_relu, c.output);
  } else {
    pre_relu.set_grad(dy);
  }
  if (u.batchnorm) {
    batchnorm_backward(c.conv, params.at(u.name + ".bn.scale"), params.at(u.name + ".bn.shift"), c.normalized, c.bn);
  }
  Grid<Scalar>* bias = u.bias ? &params.at(u.name + ".bias") : nullptr;
  conv2d_backward(c.input, params.at(u.name + ".weight"), bias, c.conv, u.stride, u.padding, propagate_input);
  if (!propagate_input) return {};
  return Grid<Scalar>(c.input.shape(), c.input.grad());
}

template <typename Scalar>
Grid<Scalar> block_forward(const ResidualBlock& b, const ParamStore<Scalar>& params, const Grid<Scalar>& x, Mode mode,
                           BlockCache<Scalar>* cache, std::vector<StatsUpdate<Scalar>>* updates) {
  if (cache) {
    cache->path.assign(b.path.size(), {});
    if (b.projection) cache->projection.emplace();
  }
  Grid<Scalar> y = x;
  for (std::size_t i = 0; i < b.path.size(); ++i) {
    y = unit_forward(b.path[i], params, y, mode, cache ? &cache->path[i] : nullptr, updates);
  }
  Grid<Scalar> shortcut =
      b.projection ? unit_forward(*b.projection, params, x, mode, cache ? &*cache->projection : nullptr, updates) : x;
  Grid<Scalar> sum = add(y, shortcut);
  Grid<Scalar> out = relu(sum);
  if (cache) {
    cache->sum = std::move(sum);
    cache->output = out;
  }
  return out;
}

template <typename Scalar>
typename Grid<Scalar>::Array block_backward(const ResidualBlock& b, ParamStore<Scalar>& params, BlockCache<Scalar>& c,
                                            const typename Grid<Scalar>::Array& dy) {
  c.output.set_grad(dy);
  relu_backward(c.sum, c.output);
  const typename Grid<Scalar>::Array dsum = c.sum.grad();
  typename Grid<Scalar>::Array d = dsum;
  for (std::size_t i = b.path.size(); i-- > 0;) d = unit_backward(b.path[i], params, c.path[i], d).data();
  if (b.projection) {
    d += unit_backward(*b.projection, params, *c.projection, dsum).data();
  } else {
    d += dsum;
  }
  return d;
}

template <typename Scalar>
void register_unit(ParamStore<Scalar>& params, const ConvUnit& u, std::mt19937_64& rng) {
  const double std_dev =
      u.init_std > 0 ? u.init_std
                     : std::sqrt((u.batchnorm || u.relu ? 2.0 : 1.0) / static_cast<double>(u.in * u.kernel * u.kernel));
  std::normal_distribution<double> normal(0.0, std_dev);
  auto& w = params.add(u.name + ".weight", {u.out, u.in, u.kernel, u.kernel});
  for (Index i = 0; i < w.size(); ++i) w[i] = static_cast<Scalar>(normal(rng));
  if (u.bias) params.add(u.name + ".bias", {u.out});
  if (u.batchnorm) {
    params.add(u.name + ".bn.scale", {u.out}).data().setOnes();
    params.add(u.name + ".bn.shift", {u.out});
    params.add(u.name + ".bn.running_mean", {u.out}, false);
    params.add(u.name + ".bn.running_var", {u.out}, false).data().setOnes();
  }
}

template <typename Scalar>
void register_block(ParamStore<Scalar>& params, const ResidualBlock& b, std::mt19937_64& rng) {
  for (const auto& u : b.path) register_unit(params, u, rng);
  if (b.projection) register_unit(params, *b.projection, rng);
}

Index level_factor(std::size_t level) { return Index(1) << level; }

}  // namespace

template <typename Scalar>
struct ForwardCache<Scalar>::Impl {
  ConvUnitCache<Scalar> stem;
  Grid<Scalar> pooled;
  MaxPoolCache<Scalar> pool;
  std::array<std::vector<BlockCache<Scalar>>, 4> stages;

  std::array<ConvUnitCache<Scalar>, 4> lateral;
  std::array<ConvUnitCache<Scalar>, 3> topdown;
  std::array<Grid<Scalar>, 3> topdown_conv;  // before upsampling
  std::array<Grid<Scalar>, 3> topdown_up;
  std::array<Grid<Scalar>, 4> lateral_out;
  std::array<Grid<Scalar>, 4> pyramid;
  std::array<ConvUnitCache<Scalar>, 4> head;
  std::array<Grid<Scalar>, 4> head_native;
  std::array<Grid<Scalar>, 4> head_up;

  std::array<std::vector<BlockCache<Scalar>>, 4> refine_blocks;
  std::array<Grid<Scalar>, 4> refine_level_out;
  std::array<Grid<Scalar>, 4> refine_level_up;
  Grid<Scalar> concat;
  BlockCache<Scalar> refine_final;
  ConvUnitCache<Scalar> refine_head;
  Grid<Scalar> refined;

  std::vector<StatsUpdate<Scalar>> stats_updates;
};

template <typename Scalar>
ForwardCache<Scalar>::ForwardCache() : impl_(std::make_unique<Impl>()) {}
template <typename Scalar>
ForwardCache<Scalar>::~ForwardCache() = default;
template <typename Scalar>
ForwardCache<Scalar>::ForwardCache(ForwardCache&&) noexcept = default;
template <typename Scalar>
ForwardCache<Scalar>& ForwardCache<Scalar>::operator=(ForwardCache&&) noexcept = default;

template <typename Scalar>
Cpn<Scalar>::Cpn(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  layout_ = std::make_unique<Layout>(config_);
}

template <typename Scalar>
Cpn<Scalar>::~Cpn() = default;

template <typename Scalar>
Cpn<Scalar>::Cpn(const Cpn& other) : config_(other.config_), layout_(std::make_unique<Layout>(other.config_)) {}

template <typename Scalar>
Cpn<Scalar>& Cpn<Scalar>::operator=(const Cpn& other) {
  if (this != &other) {
    config_ = other.config_;
    layout_ = std::make_unique<Layout>(config_);
  }
  return *this;
}

template <typename Scalar>
ParamStore<Scalar> Cpn<Scalar>::init_params(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  ParamStore<Scalar> params;
  const Layout& l = *layout_;
  register_unit(params, l.stem, rng);
  for (const auto& stage : l.stages) {
    for (const auto& b : stage) register_block(params, b, rng);
  }
  for (std::size_t i = 0; i < 4; ++i) {
    register_unit(params, l.lateral[i], rng);
    if (i < 3) register_unit(params, l.topdown[i], rng);
    register_unit(params, l.global_head[i], rng);
  }
  if (config_.refine_enabled) {
    for (const auto& level : l.refine_levels) {
      for (const auto& b : level) register_block(params, b, rng);
    }
    register_block(params, *l.refine_final, rng);
    register_unit(params, *l.refine_head, rng);
  }
  return params;
}

template <typename Scalar>
Pyramid<Scalar> Cpn<Scalar>::backbone_forward(const ParamStore<Scalar>& params, const Grid<Scalar>& images, Mode mode,
                                              ForwardCache<Scalar>* cache) const {
  if (images.rank() != 4 || images.channels() != 3) {
    throw std::invalid_argument("backbone_forward: expected N x 3 x H x W, got " + shape_string(images.shape()));
  }
  if (images.height() % 32 != 0 || images.width() % 32 != 0) {
    throw std::invalid_argument("backbone_forward: spatial extent of " + shape_string(images.shape()) +
                                " must be divisible by 32");
  }
  const Layout& l = *layout_;
  auto* c = cache ? &cache->impl() : nullptr;
  auto* updates = c ? &c->stats_updates : nullptr;
  Grid<Scalar> x = unit_forward(l.stem, params, images, mode, c ? &c->stem : nullptr, updates);
  x = maxpool(x, 2, 2, c ? &c->pool : nullptr);
  if (c) c->pooled = x;
  Pyramid<Scalar> features;
  for (std::size_t s = 0; s < 4; ++s) {
    if (c) c->stages[s].assign(l.stages[s].size(), {});
    for (std::size_t b = 0; b < l.stages[s].size(); ++b) {
      if (c) c->stages[s][b].input = x;
      x = block_forward(l.stages[s][b], params, x, mode, c ? &c->stages[s][b] : nullptr, updates);
    }
    features[s] = x;
  }
  return features;
}

template <typename Scalar>
GlobalNetResult<Scalar> Cpn<Scalar>::globalnet_forward(const ParamStore<Scalar>& params,
                                                       const Pyramid<Scalar>& features, Mode mode,
                                                       ForwardCache<Scalar>* cache) const {
  const Layout& l = *layout_;
  auto* c = cache ? &cache->impl() : nullptr;
  auto* updates = c ? &c->stats_updates : nullptr;
  GlobalNetResult<Scalar> r;
  for (std::size_t i = 4; i-- > 0;) {
    Grid<Scalar> lateral = unit_forward(l.lateral[i], params, features[i], mode, c ? &c->lateral[i] : nullptr, updates);
    if (i == 3) {
      r.features[i] = std::move(lateral);
    } else {
      Grid<Scalar> td = unit_forward(l.topdown[i], params, r.features[i + 1], mode, c ? &c->topdown[i] : nullptr, updates);
      Grid<Scalar> up = upsample_nearest(td, 2);
      if (c) {
        c->lateral_out[i] = lateral;
        c->topdown_conv[i] = td;
        c->topdown_up[i] = up;
      }
      r.features[i] = add(lateral, up);
    }
    if (c && i == 3) c->lateral_out[i] = r.features[i];
  }
  for (std::size_t i = 0; i < 4; ++i) {
    Grid<Scalar> head = unit_forward(l.global_head[i], params, r.features[i], mode, c ? &c->head[i] : nullptr, updates);
    r.heatmaps[i] = upsample_nearest(head, level_factor(i));
    if (c) {
      c->head_native[i] = std::move(head);
      c->pyramid[i] = r.features[i];
    }
  }
  return r;
}

template <typename Scalar>
Grid<Scalar> Cpn<Scalar>::refinenet_forward(const ParamStore<Scalar>& params, const Pyramid<Scalar>& pyramid, Mode mode,
                                            ForwardCache<Scalar>* cache) const {
  if (!config_.refine_enabled) throw std::logic_error("refinenet_forward: RefineNet disabled in this config");
  const Layout& l = *layout_;
  auto* c = cache ? &cache->impl() : nullptr;
  auto* updates = c ? &c->stats_updates : nullptr;
  const auto levels = static_cast<std::size_t>(config_.refine_levels);
  std::vector<Grid<Scalar>> upsampled(levels);
  for (std::size_t i = 0; i < levels; ++i) {
    if (c) c->refine_blocks[i].assign(l.refine_levels[i].size(), {});
    Grid<Scalar> x = pyramid[i];
    for (std::size_t b = 0; b < l.refine_levels[i].size(); ++b) {
      x = block_forward(l.refine_levels[i][b], params, x, mode, c ? &c->refine_blocks[i][b] : nullptr, updates);
    }
    upsampled[i] = upsample_nearest(x, level_factor(i));
    if (c) {
      c->refine_level_out[i] = std::move(x);
      c->refine_level_up[i] = upsampled[i];
    }
  }
  std::vector<const Grid<Scalar>*> parts;
  for (const auto& g : upsampled) parts.push_back(&g);
  Grid<Scalar> cat = concat_channels<Scalar>(parts);
  Grid<Scalar> x = block_forward(*l.refine_final, params, cat, mode, c ? &c->refine_final : nullptr, updates);
  Grid<Scalar> out = unit_forward(*l.refine_head, params, x, mode, c ? &c->refine_head : nullptr, updates);
  if (c) {
    c->concat = std::move(cat);
    c->refined = out;
  }
  return out;
}

template <typename Scalar>
NetworkOutput<Scalar> Cpn<Scalar>::forward(const ParamStore<Scalar>& params, const Grid<Scalar>& images, Mode mode,
                                           ForwardCache<Scalar>* cache) const {
  if (images.height() != config_.crop_height || images.width() != config_.crop_width) {
    // Other sizes are allowed as long as they divide by 32; heads follow the input.
  }
  if (cache) cache->impl().stats_updates.clear();
  const Pyramid<Scalar> c = backbone_forward(params, images, mode, cache);
  GlobalNetResult<Scalar> g = globalnet_forward(params, c, mode, cache);
  NetworkOutput<Scalar> out;
  if (config_.refine_enabled) out.refined = refinenet_forward(params, g.features, mode, cache);
  out.global = std::move(g.heatmaps);
  return out;
}

template <typename Scalar>
void Cpn<Scalar>::backward(ParamStore<Scalar>& params, ForwardCache<Scalar>& cache,
                           const NetworkOutput<Scalar>& output) const {
  using Array = typename Grid<Scalar>::Array;
  const Layout& l = *layout_;
  auto& c = cache.impl();
  std::array<Array, 4> dpyramid;
  for (std::size_t i = 0; i < 4; ++i) dpyramid[i] = Array::Zero(c.pyramid[i].size());

  if (config_.refine_enabled && output.refined && output.refined->has_grad()) {
    Array d = unit_backward(*l.refine_head, params, c.refine_head, output.refined->grad()).data();
    d = block_backward(*l.refine_final, params, c.refine_final, d);
    c.concat.set_grad(d);
    const auto levels = static_cast<std::size_t>(config_.refine_levels);
    std::vector<Grid<Scalar>*> parts;
    for (std::size_t i = 0; i < levels; ++i) {
      c.refine_level_up[i].drop_grad();
      parts.push_back(&c.refine_level_up[i]);
    }
    concat_channels_backward<Scalar>(parts, c.concat);
    for (std::size_t i = 0; i < levels; ++i) {
      c.refine_level_out[i].drop_grad();
      upsample_nearest_backward(c.refine_level_out[i], c.refine_level_up[i], level_factor(i));
      Array dl = c.refine_level_out[i].grad();
      for (std::size_t b = l.refine_levels[i].size(); b-- > 0;) {
        dl = block_backward(l.refine_levels[i][b], params, c.refine_blocks[i][b], dl);
      }
      dpyramid[i] += dl;
    }
  }

  for (std::size_t i = 0; i < 4; ++i) {
    if (!output.global[i].has_grad()) continue;
    c.head_native[i].drop_grad();
    Grid<Scalar> up_out(output.global[i].shape(), output.global[i].data());
    up_out.set_grad(output.global[i].grad());
    upsample_nearest_backward(c.head_native[i], up_out, level_factor(i));
    dpyramid[i] += unit_backward(l.global_head[i], params, c.head[i], c.head_native[i].grad()).data();
  }

  std::array<Array, 4> dfeatures;
  for (std::size_t i = 0; i < 4; ++i) {
    // dpyramid[i] is complete once levels below have pushed their top-down share.
    if (i < 3) {
      c.topdown_conv[i].drop_grad();
      c.topdown_up[i].set_grad(dpyramid[i]);
      upsample_nearest_backward(c.topdown_conv[i], c.topdown_up[i], 2);
      dpyramid[i + 1] += unit_backward(l.topdown[i], params, c.topdown[i], c.topdown_conv[i].grad()).data();
    }
    dfeatures[i] = unit_backward(l.lateral[i], params, c.lateral[i], dpyramid[i]).data();
  }

  Array d = dfeatures[3];
  for (std::size_t s = 4; s-- > 0;) {
    if (s < 3) d += dfeatures[s];
    for (std::size_t b = l.stages[s].size(); b-- > 0;) d = block_backward(l.stages[s][b], params, c.stages[s][b], d);
  }
  Grid<Scalar> pooled_out(c.pooled.shape(), c.pooled.data());
  pooled_out.set_grad(d);
  c.stem.output.drop_grad();
  Grid<Scalar>& stem_out = c.stem.output;
  maxpool_backward(stem_out, pooled_out, c.pool);
  const Array dstem = stem_out.grad();
  unit_backward(l.stem, params, c.stem, dstem, false);
}

template <typename Scalar>
void Cpn<Scalar>::commit_running_stats(ParamStore<Scalar>& params, const ForwardCache<Scalar>& cache) {
  for (const auto& u : cache.impl().stats_updates) {
    params.at(u.name + ".running_mean").data() = u.stats.mean;
    params.at(u.name + ".running_var").data() = u.stats.var;
  }
}

namespace {

struct Counter {
  std::int64_t params = 0;
  std::int64_t macs = 0;

  void conv(Index in, Index out, Index k, bool bias, bool bn, Index h_out, Index w_out) {
    params += out * in * k * k + (bias ? out : 0) + (bn ? 2 * out : 0);
    macs += out * in * k * k * h_out * w_out;
  }
  void bottleneck(Index in, Index out, Index h, Index w) {
    const Index mid = out / 2;
    conv(in, mid, 1, false, true, h, w);
    conv(mid, mid, 3, false, true, h, w);
    conv(mid, out, 1, false, true, h, w);
    if (in != out) conv(in, out, 1, false, true, h, w);
  }
};

Counter count_model(const ModelConfig& c, Index h, Index w) {
  c.validate();
  Counter n;
  const auto& widths = c.backbone_widths;
  const Index lat = c.lateral_channels;
  const Index k = c.num_keypoints;
  Index fh = h / 2, fw = w / 2;
  n.conv(3, widths[0], 3, false, true, fh, fw);
  fh /= 2;
  fw /= 2;
  std::array<Index, 4> level_h{}, level_w{};
  for (std::size_t s = 0; s < 4; ++s) {
    for (Index b = 0; b < c.blocks_per_stage; ++b) {
      const Index in = b == 0 ? (s == 0 ? widths[0] : widths[s - 1]) : widths[s];
      if (b == 0 && s > 0) {
        fh /= 2;
        fw /= 2;
      }
      n.conv(in, widths[s], 3, false, true, fh, fw);
      n.conv(widths[s], widths[s], 3, false, true, fh, fw);
      if (in != widths[s] || (b == 0 && s > 0)) n.conv(in, widths[s], 1, false, true, fh, fw);
    }
    level_h[s] = fh;
    level_w[s] = fw;
  }
  for (std::size_t i = 0; i < 4; ++i) {
    n.conv(widths[i], lat, 1, true, false, level_h[i], level_w[i]);
    if (i < 3) n.conv(lat, lat, 1, true, false, level_h[i + 1], level_w[i + 1]);
    n.conv(lat, k, 3, true, false, level_h[i], level_w[i]);
  }
  if (c.refine_enabled) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(c.refine_levels); ++i) {
      for (Index b = 0; b < c.refine_blocks[i]; ++b) n.bottleneck(lat, lat, level_h[i], level_w[i]);
    }
    n.bottleneck(c.refine_levels * lat, lat, level_h[0], level_w[0]);
    n.conv(lat, k, 3, true, false, level_h[0], level_w[0]);
  }
  return n;
}

}  // namespace

std::int64_t count_params(const ModelConfig& config) {
  return count_model(config, config.crop_height, config.crop_width).params;
}

std::int64_t count_flops(const ModelConfig& config, Index input_height, Index input_width) {
  if (input_height % 32 != 0 || input_width % 32 != 0) {
    throw std::invalid_argument("count_flops: input size must divide by 32");
  }
  return 2 * count_model(config, input_height, input_width).macs;
}

std::string describe_architecture(const ModelConfig& c) {
  std::ostringstream os;
  os << "backbone=" << c.backbone_widths[0] << "," << c.backbone_widths[1] << "," << c.backbone_widths[2] << ","
     << c.backbone_widths[3] << "x" << c.blocks_per_stage << " lateral=" << c.lateral_channels;
  if (c.refine_enabled) {
    os << " refine_blocks=" << c.refine_blocks[0] << "," << c.refine_blocks[1] << "," << c.refine_blocks[2] << ","
       << c.refine_blocks[3] << " refine_levels=C2~C" << (c.refine_levels + 1);
  } else {
    os << " refine=off";
  }
  os << " global_loss=" << to_string(c.loss.global_loss);
  if (c.refine_enabled) os << " refine_loss=" << to_string(c.loss.refine_loss);
  os << " M=" << c.loss.hard_keypoints << " params=" << count_params(c)
     << " flops=" << count_flops(c, c.crop_height, c.crop_width);
  return os.str();
}

template class ForwardCache<float>;
template class ForwardCache<double>;
template class Cpn<float>;
template class Cpn<double>;

}  // namespace cpnkit
