#pragma once

// Finite-difference checks of every tensorcore primitive and of a toy
// end-to-end network, shared by the unit tests and the acceptance runner.

#include "cpnkit/loss.hpp"
#include "cpnkit/network.hpp"
#include "cpnkit/ops.hpp"
#include "gradcheck.hpp"

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace cpnkit::testing {

struct CheckSummary {
  int configs = 0;
  Index checked = 0;
  Index kinks = 0;  // probes replaced because they straddled a kink
  int redraws = 0;  // network configurations discarded as sitting on a kink
  double worst = 0;
  std::string worst_at;

  void record(double err, const std::string& where) {
    ++checked;
    if (err > worst) {
      worst = err;
      worst_at = where;
    }
  }
  void merge(const CheckSummary& o) {
    configs += o.configs;
    checked += o.checked;
    kinks += o.kinks;
    redraws += o.redraws;
    if (o.worst > worst) {
      worst = o.worst;
      worst_at = o.worst_at;
    }
  }
  bool passed() const { return worst < kFdTolerance; }
};

using Inputs = std::vector<Grid<double>*>;

/// Checks a primitive through L = sum(r * forward()). `backward(out)` must
/// accumulate into the inputs' grad slots, reading out.grad().
inline void check_primitive(const std::string& name, const Inputs& inputs,
                            const std::function<Grid<double>()>& forward,
                            const std::function<void(Grid<double>&)>& backward, std::mt19937_64& rng,
                            CheckSummary& summary) {
  Grid<double> out = forward();
  const Grid<double> weights = random_grid(out.shape(), rng);
  for (auto* in : inputs) in->drop_grad();
  out.set_grad(weights.data());
  backward(out);
  auto loss = [&] { return (forward().data() * weights.data()).sum(); };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Grid<double>& in = *inputs[i];
    const auto analytic = in.has_grad() ? in.grad() : typename Grid<double>::Array(Grid<double>::Array::Zero(in.size()));
    for (Index j = 0; j < in.size(); ++j) {
      const double numeric = central_difference(loss, in[j]);
      summary.record(relative_error(analytic[j], numeric), name + " input " + std::to_string(i) + "[" + std::to_string(j) + "]");
    }
  }
  ++summary.configs;
}

inline CheckSummary check_all_primitives(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  CheckSummary s;
  struct ConvCase {
    Index n, c, h, w, o, k, stride, pad;
    bool bias;
  };
  const std::vector<ConvCase> convs = {{1, 2, 5, 4, 3, 3, 1, 1, true},  {2, 3, 6, 6, 2, 3, 2, 1, false},
                                       {1, 4, 4, 3, 4, 1, 1, 0, true},  {2, 2, 5, 5, 3, 1, 2, 0, false},
                                       {1, 1, 7, 5, 2, 3, 1, 0, true},  {1, 3, 4, 4, 2, 2, 2, 0, true},
                                       {2, 2, 3, 3, 2, 3, 1, 2, false}, {1, 5, 2, 2, 3, 1, 1, 0, false}};
  for (const auto& cc : convs) {
    Grid<double> x = random_grid({cc.n, cc.c, cc.h, cc.w}, rng);
    Grid<double> k = random_grid({cc.o, cc.c, cc.k, cc.k}, rng);
    Grid<double> b = random_grid({cc.o}, rng);
    Inputs ins{&x, &k};
    if (cc.bias) ins.push_back(&b);
    check_primitive(
        "conv2d k" + std::to_string(cc.k) + " s" + std::to_string(cc.stride), ins,
        [&] { return conv2d(x, k, cc.bias ? &b : nullptr, cc.stride, cc.pad); },
        [&](Grid<double>& out) { conv2d_backward(x, k, cc.bias ? &b : nullptr, out, cc.stride, cc.pad); }, rng, s);
  }
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    for (Index n : {1, 3}) {
      Grid<double> x = random_grid({n, 3, 3, 2}, rng, 2.0);
      Grid<double> scale = random_grid({3}, rng);
      Grid<double> shift = random_grid({3}, rng);
      RunningStats<double> base{Eigen::ArrayXd::Random(3) * 0.5, Eigen::ArrayXd::Random(3).abs() + 0.5};
      BatchNormCache<double> cache;
      check_primitive(
          std::string("batchnorm ") + (mode == Mode::kTrain ? "train" : "eval"), {&x, &scale, &shift},
          [&] {
            RunningStats<double> stats = base;
            return batchnorm(x, scale, shift, stats, mode, &cache);
          },
          [&](Grid<double>& out) { batchnorm_backward(x, scale, shift, out, cache); }, rng, s);
    }
  }
  for (Index f : {1, 2, 4}) {
    Grid<double> x = random_grid({2, 2, 2, 3}, rng);
    check_primitive(
        "upsample x" + std::to_string(f), {&x}, [&] { return upsample_nearest(x, f); },
        [&](Grid<double>& out) { upsample_nearest_backward(x, out, f); }, rng, s);
  }
  {
    Grid<double> x({2, 3, 4, 4});
    fill_away_from_zero(x, rng);
    check_primitive(
        "relu", {&x}, [&] { return relu(x); }, [&](Grid<double>& out) { relu_backward(x, out); }, rng, s);
  }
  {
    Grid<double> a = random_grid({2, 2, 3, 3}, rng);
    Grid<double> b = random_grid({2, 2, 3, 3}, rng);
    check_primitive(
        "add", {&a, &b}, [&] { return add(a, b); }, [&](Grid<double>& out) { add_backward(a, b, out); }, rng, s);
  }
  {
    Grid<double> a = random_grid({2, 1, 3, 2}, rng);
    Grid<double> b = random_grid({2, 3, 3, 2}, rng);
    Grid<double> c = random_grid({2, 2, 3, 2}, rng);
    check_primitive(
        "concat", {&a, &b, &c},
        [&] {
          std::vector<const Grid<double>*> parts{&a, &b, &c};
          return concat_channels<double>(parts);
        },
        [&](Grid<double>& out) {
          std::vector<Grid<double>*> parts{&a, &b, &c};
          concat_channels_backward<double>(parts, out);
        },
        rng, s);
  }
  for (auto [k, stride] : {std::pair<Index, Index>{2, 2}, {3, 1}, {2, 1}}) {
    // Distinct, well separated values so no window has a near tie.
    Grid<double> x({1, 2, 5, 6});
    std::vector<double> values(static_cast<std::size_t>(x.size()));
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = 0.05 * static_cast<double>(i);
    std::shuffle(values.begin(), values.end(), rng);
    for (Index i = 0; i < x.size(); ++i) x[i] = values[static_cast<std::size_t>(i)];
    MaxPoolCache<double> cache;
    check_primitive(
        "maxpool k" + std::to_string(k) + " s" + std::to_string(stride), {&x},
        [&] { return maxpool(x, k, stride, &cache); }, [&](Grid<double>& out) { maxpool_backward(x, out, cache); },
        rng, s);
  }
  return s;
}

/// Small network configuration used for end-to-end checks.
inline ModelConfig toy_check_config(bool refine, LossKind global_loss, LossKind refine_loss) {
  ModelConfig c;
  c.backbone_widths = {4, 6, 8, 8};
  c.blocks_per_stage = 1;
  c.lateral_channels = 6;
  c.refine_enabled = refine;
  c.refine_blocks = {0, 1, 1, 2};
  c.crop_height = 64;
  c.crop_width = 32;
  c.loss.global_loss = global_loss;
  c.loss.refine_loss = refine_loss;
  c.loss.hard_keypoints = 8;
  return c;
}

/// End-to-end check: total loss of a train-mode forward (batch statistics)
/// against sampled parameters. OHKM selections are frozen from the analytic
/// pass so the numeric loss differentiates the same objective.
/// nullopt when some parameter entry has no kink-free probe: the drawn point
/// sits on a branch boundary and the caller draws another one.
inline std::optional<CheckSummary> check_network_draw(const ModelConfig& config, Index batch, int samples,
                                                      std::mt19937_64& rng) {
  const std::uint64_t seed = rng();
  const Cpn<double> net(config);
  ParamStore<double> params = net.init_params(seed);
  // Shift weights away from the initial scale so heads carry real signal.
  for (auto& e : params.entries()) {
    if (!e.trainable) continue;
    std::normal_distribution<double> n(0.0, 0.05);
    for (Index i = 0; i < e.value.size(); ++i) e.value[i] += n(rng);
  }
  // Normalised pre-activations ~ N(+-shift, scale^2) keep most units well
  // clear of the relu kink, as fill_away_from_zero does for single ops.
  std::uniform_real_distribution<double> shift(0.75, 1.5), scale(0.3, 0.6);
  std::bernoulli_distribution sign(0.7);
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (auto& e : params.entries()) {
    if (ends_with(e.name, ".bn.shift")) {
      for (Index i = 0; i < e.value.size(); ++i) e.value[i] = sign(rng) ? shift(rng) : -shift(rng);
    } else if (ends_with(e.name, ".bn.scale")) {
      for (Index i = 0; i < e.value.size(); ++i) e.value[i] = scale(rng);
    }
  }
  const Grid<double> images = random_grid({batch, 3, config.crop_height, config.crop_width}, rng);
  const Index kh = config.heatmap_height(), kw = config.heatmap_width();
  Grid<double> targets({batch, config.num_keypoints, kh, kw});
  std::uniform_real_distribution<double> u(0, 1);
  for (Index i = 0; i < targets.size(); ++i) targets[i] = u(rng);
  std::vector<KeypointMask> masks(static_cast<std::size_t>(batch), KeypointMask(static_cast<std::size_t>(config.num_keypoints), true));
  masks[0][3] = false;

  ForwardCache<double> cache;
  NetworkOutput<double> out = net.forward(params, images, Mode::kTrain, &cache);
  const LossBreakdown analytic = total_loss(out, targets, masks, config.loss, true);
  params.zero_grad();
  net.backward(params, cache, out);

  // Frozen-selection objective for the numeric side.
  auto objective = [&]() {
    NetworkOutput<double> o = net.forward(params, images, Mode::kTrain);
    double total = 0;
    auto term = [&](const Grid<double>& pred, LossKind kind, const std::vector<std::vector<int>>* fixed) {
      if (kind == LossKind::kNone) return 0.0;
      double sum = 0;
      for (Index b = 0; b < batch; ++b) {
        const auto* sel = fixed ? &(*fixed)[static_cast<std::size_t>(b)] : nullptr;
        sum += heatmap_loss(batch_item(pred, b), batch_item(targets, b), masks[static_cast<std::size_t>(b)], kind,
                            config.loss.hard_keypoints, nullptr, sel)
                   .loss;
      }
      return sum / static_cast<double>(batch);
    };
    for (const auto& g : o.global) total += term(g, config.loss.global_loss, nullptr);
    if (o.refined) total += term(*o.refined, config.loss.refine_loss, &analytic.refine_selected);
    return total;
  };

  CheckSummary s;
  s.configs = 1;
  std::vector<std::pair<std::string, Index>> candidates;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    for (Index i = 0; i < e.value.size(); ++i) candidates.push_back({e.name, i});
  }
  std::shuffle(candidates.begin(), candidates.end(), rng);

  // A probe whose +-h segment changes a relu or maxpool branch measures the
  // kink, not the derivative; it is replaced by the next candidate.
  set_branch_tracing(true);
  auto signature = [&] {
    reset_branch_signature();
    objective();
    return branch_signature();
  };
  const std::uint64_t base = signature();
  auto probe = [&](const std::string& name, Index idx) {
    Grid<double>& p = params.at(name);
    const double saved = p[idx];
    p[idx] = saved + kFdStep;
    const std::uint64_t up = signature();
    p[idx] = saved - kFdStep;
    const std::uint64_t down = signature();
    p[idx] = saved;
    if (up != base || down != base) {
      ++s.kinks;
      return false;
    }
    const double analytic_grad = p.has_grad() ? p.grad()[idx] : 0.0;
    s.record(relative_error(analytic_grad, central_difference(objective, p[idx])), name + "[" + std::to_string(idx) + "]");
    return true;
  };
  // Every entry gets at least one probe, then random extras.
  std::size_t next = 0;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    bool done = false;
    for (int attempt = 0; attempt < 32 && !done; ++attempt) {
      done = probe(e.name, std::uniform_int_distribution<Index>(0, e.value.size() - 1)(rng));
    }
    if (!done) {
      set_branch_tracing(false);
      return std::nullopt;
    }
  }
  while (s.checked < samples && next < candidates.size()) {
    probe(candidates[next].first, candidates[next].second);
    ++next;
  }
  set_branch_tracing(false);
  return s;
}

inline CheckSummary check_network(const ModelConfig& config, Index batch, int samples, std::uint64_t seed) {
  constexpr int kMaxDraws = 4;
  std::mt19937_64 rng(seed);
  int redraws = 0;
  for (; redraws < kMaxDraws; ++redraws) {
    if (auto s = check_network_draw(config, batch, samples, rng)) {
      s->redraws = redraws;
      return *s;
    }
  }
  CheckSummary failed;
  failed.configs = 1;
  failed.redraws = redraws;
  failed.record(1.0, "no draw without a parameter pinned to a kink");
  return failed;
}

}  // namespace cpnkit::testing
