#include "cpnkit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cpnkit {

template class Grid<float>;
template class Grid<double>;

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e < 0) throw std::invalid_argument("negative extent in shape " + shape_string(shape));
    n *= e;
  }
  return n;
}

namespace {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

thread_local std::uint64_t g_conv_macs = 0;
thread_local bool g_tracing = false;
thread_local std::uint64_t g_signature = 0;

void trace(std::uint64_t v) {
  g_signature = (g_signature ^ v) * 1099511628211ULL;  // FNV-1a step
}

void require_image(const Shape& shape, const char* op) {
  if (shape.size() != 3 && shape.size() != 4) {
    throw std::invalid_argument(std::string(op) + ": expected C x H x W or N x C x H x W, got " + shape_string(shape));
  }
}

Shape image_shape(const Shape& like, Index n, Index c, Index h, Index w) {
  if (like.size() == 4) return {n, c, h, w};
  return {c, h, w};
}

Index conv_extent(Index in, Index k, Index stride, Index padding) {
  return (in + 2 * padding - k) / stride + 1;
}

struct ConvDims {
  Index n, c, h, w, o, k, ho, wo;
};

template <typename Scalar>
ConvDims check_conv(const Grid<Scalar>& input, const Grid<Scalar>& kernel, const Grid<Scalar>* bias, Index stride,
                    Index padding) {
  require_image(input.shape(), "conv2d");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
  const auto& ks = kernel.shape();
  if (ks.size() != 4 || ks[2] != ks[3] || ks[1] != input.channels()) {
    throw std::invalid_argument("conv2d: kernel " + shape_string(ks) + " incompatible with input " +
                                shape_string(input.shape()));
  }
  if (bias && (bias->rank() != 1 || bias->size() != ks[0])) {
    throw std::invalid_argument("conv2d: bias " + shape_string(bias->shape()) + " incompatible with kernel " +
                                shape_string(ks));
  }
  ConvDims d{input.batch(), input.channels(), input.height(), input.width(), ks[0], ks[2], 0, 0};
  if (d.h + 2 * padding < d.k || d.w + 2 * padding < d.k) {
    throw std::invalid_argument("conv2d: kernel " + shape_string(ks) + " larger than padded input " +
                                shape_string(input.shape()));
  }
  d.ho = conv_extent(d.h, d.k, stride, padding);
  d.wo = conv_extent(d.w, d.k, stride, padding);
  return d;
}

bool is_pointwise(const ConvDims& d, Index stride, Index padding) {
  return d.k == 1 && stride == 1 && padding == 0;
}

template <typename Scalar>
void im2col(const Scalar* x, const ConvDims& d, Index stride, Index padding, Scalar* col) {
  const Index cols = d.ho * d.wo;
  for (Index c = 0; c < d.c; ++c) {
    for (Index ky = 0; ky < d.k; ++ky) {
      for (Index kx = 0; kx < d.k; ++kx) {
        Scalar* row = col + ((c * d.k + ky) * d.k + kx) * cols;
        for (Index oy = 0; oy < d.ho; ++oy) {
          const Index iy = oy * stride - padding + ky;
          Scalar* dst = row + oy * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(dst, dst + d.wo, Scalar(0));
            continue;
          }
          const Scalar* src = x + (c * d.h + iy) * d.w;
          for (Index ox = 0; ox < d.wo; ++ox) {
            const Index ix = ox * stride - padding + kx;
            dst[ox] = (ix >= 0 && ix < d.w) ? src[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Scalar* col, const ConvDims& d, Index stride, Index padding, Scalar* dx) {
  const Index cols = d.ho * d.wo;
  for (Index c = 0; c < d.c; ++c) {
    for (Index ky = 0; ky < d.k; ++ky) {
      for (Index kx = 0; kx < d.k; ++kx) {
        const Scalar* row = col + ((c * d.k + ky) * d.k + kx) * cols;
        for (Index oy = 0; oy < d.ho; ++oy) {
          const Index iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= d.h) continue;
          Scalar* dst = dx + (c * d.h + iy) * d.w;
          const Scalar* src = row + oy * d.wo;
          for (Index ox = 0; ox < d.wo; ++ox) {
            const Index ix = ox * stride - padding + kx;
            if (ix >= 0 && ix < d.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
void require_same_shape(const Grid<Scalar>& a, const Grid<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

}  // namespace

std::uint64_t conv_macs() { return g_conv_macs; }
void reset_conv_macs() { g_conv_macs = 0; }

void set_branch_tracing(bool enabled) { g_tracing = enabled; }
std::uint64_t branch_signature() { return g_signature; }
void reset_branch_signature() { g_signature = 14695981039346656037ULL; }

template <typename Scalar>
Grid<Scalar> conv2d(const Grid<Scalar>& input, const Grid<Scalar>& kernel, const Grid<Scalar>* bias, Index stride,
                    Index padding) {
  const ConvDims d = check_conv(input, kernel, bias, stride, padding);
  Grid<Scalar> out(image_shape(input.shape(), d.n, d.o, d.ho, d.wo));
  const Index rows = d.c * d.k * d.k;
  const Index cols = d.ho * d.wo;
  ConstRowMap<Scalar> w(kernel.ptr(), d.o, rows);
  RowMatrix<Scalar> col;
  if (!is_pointwise(d, stride, padding)) col.resize(rows, cols);
  for (Index n = 0; n < d.n; ++n) {
    const Scalar* x = input.ptr() + n * d.c * d.h * d.w;
    RowMap<Scalar> y(out.ptr() + n * d.o * cols, d.o, cols);
    if (is_pointwise(d, stride, padding)) {
      y.noalias() = w * ConstRowMap<Scalar>(x, rows, cols);
    } else {
      im2col(x, d, stride, padding, col.data());
      y.noalias() = w * col;
    }
    if (bias) y.colwise() += bias->data().matrix();
  }
  g_conv_macs += static_cast<std::uint64_t>(d.n * d.o * rows * cols);
  return out;
}

template <typename Scalar>
void conv2d_backward(Grid<Scalar>& input, Grid<Scalar>& kernel, Grid<Scalar>* bias, const Grid<Scalar>& output,
                     Index stride, Index padding, bool propagate_input) {
  const ConvDims d = check_conv(input, kernel, bias, stride, padding);
  const Index rows = d.c * d.k * d.k;
  const Index cols = d.ho * d.wo;
  ConstRowMap<Scalar> w(kernel.ptr(), d.o, rows);
  RowMap<Scalar> dw(kernel.grad().data(), d.o, rows);
  const auto& dy_all = output.grad();
  RowMatrix<Scalar> col;
  RowMatrix<Scalar> dcol;
  const bool pointwise = is_pointwise(d, stride, padding);
  if (!pointwise) col.resize(rows, cols);
  Scalar* dx_all = propagate_input ? input.grad().data() : nullptr;
  for (Index n = 0; n < d.n; ++n) {
    const Scalar* x = input.ptr() + n * d.c * d.h * d.w;
    ConstRowMap<Scalar> dy(dy_all.data() + n * d.o * cols, d.o, cols);
    if (pointwise) {
      dw.noalias() += dy * ConstRowMap<Scalar>(x, rows, cols).transpose();
    } else {
      im2col(x, d, stride, padding, col.data());
      dw.noalias() += dy * col.transpose();
    }
    if (bias) bias->grad() += dy.rowwise().sum().array();
    if (dx_all) {
      Scalar* dx = dx_all + n * d.c * d.h * d.w;
      if (pointwise) {
        RowMap<Scalar>(dx, rows, cols).noalias() += w.transpose() * dy;
      } else {
        dcol.noalias() = w.transpose() * dy;
        col2im_add(dcol.data(), d, stride, padding, dx);
      }
    }
  }
}

template <typename Scalar>
Grid<Scalar> batchnorm(const Grid<Scalar>& input, const Grid<Scalar>& scale, const Grid<Scalar>& shift,
                       RunningStats<Scalar>& stats, Mode mode, BatchNormCache<Scalar>* cache,
                       const BatchNormOptions& options) {
  require_image(input.shape(), "batchnorm");
  const Index n = input.batch(), c = input.channels(), hw = input.height() * input.width();
  if (hw == 0 || n == 0) throw std::invalid_argument("batchnorm: zero-size extent in " + shape_string(input.shape()));
  if (scale.size() != c || shift.size() != c) {
    throw std::invalid_argument("batchnorm: scale/shift length " + std::to_string(scale.size()) + "/" +
                                std::to_string(shift.size()) + " does not match channels of " +
                                shape_string(input.shape()));
  }
  if (stats.mean.size() != c || stats.var.size() != c) {
    throw std::invalid_argument("batchnorm: running statistics do not match channels of " +
                                shape_string(input.shape()));
  }
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  const Scalar eps = static_cast<Scalar>(options.epsilon);
  Array mean(c), var(c);
  if (mode == Mode::kTrain) {
    const Scalar count = static_cast<Scalar>(n * hw);
    for (Index ch = 0; ch < c; ++ch) {
      Scalar sum = 0;
      for (Index b = 0; b < n; ++b) sum += input.data().segment((b * c + ch) * hw, hw).sum();
      const Scalar mu = sum / count;
      Scalar sq = 0;
      for (Index b = 0; b < n; ++b) sq += (input.data().segment((b * c + ch) * hw, hw) - mu).square().sum();
      mean[ch] = mu;
      var[ch] = sq / count;
    }
    const Scalar m = static_cast<Scalar>(options.momentum);
    stats.mean = m * stats.mean + (Scalar(1) - m) * mean;
    stats.var = m * stats.var + (Scalar(1) - m) * var;
  } else {
    mean = stats.mean;
    var = stats.var;
  }
  const Array inv_std = (var + eps).sqrt().inverse();
  Grid<Scalar> normalized(input.shape());
  Grid<Scalar> out(input.shape());
  for (Index b = 0; b < n; ++b) {
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (b * c + ch) * hw;
      normalized.data().segment(off, hw) = (input.data().segment(off, hw) - mean[ch]) * inv_std[ch];
      out.data().segment(off, hw) = normalized.data().segment(off, hw) * scale[ch] + shift[ch];
    }
  }
  if (cache) {
    cache->mode = mode;
    cache->inv_std = inv_std;
    cache->normalized = std::move(normalized);
  }
  return out;
}

template <typename Scalar>
void batchnorm_backward(Grid<Scalar>& input, Grid<Scalar>& scale, Grid<Scalar>& shift, const Grid<Scalar>& output,
                        const BatchNormCache<Scalar>& cache) {
  require_same_shape(input, output, "batchnorm_backward");
  const Index n = input.batch(), c = input.channels(), hw = input.height() * input.width();
  const auto& dy = output.grad();
  const auto& xhat = cache.normalized.data();
  auto& dx = input.grad();
  auto& dscale = scale.grad();
  auto& dshift = shift.grad();
  const Scalar count = static_cast<Scalar>(n * hw);
  for (Index ch = 0; ch < c; ++ch) {
    Scalar sum_dy = 0, sum_dy_xhat = 0;
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      sum_dy += dy.segment(off, hw).sum();
      sum_dy_xhat += (dy.segment(off, hw) * xhat.segment(off, hw)).sum();
    }
    dscale[ch] += sum_dy_xhat;
    dshift[ch] += sum_dy;
    const Scalar g = scale[ch] * cache.inv_std[ch];
    for (Index b = 0; b < n; ++b) {
      const Index off = (b * c + ch) * hw;
      if (cache.mode == Mode::kTrain) {
        dx.segment(off, hw) += g * (dy.segment(off, hw) - sum_dy / count - xhat.segment(off, hw) * (sum_dy_xhat / count));
      } else {
        dx.segment(off, hw) += g * dy.segment(off, hw);
      }
    }
  }
}

template <typename Scalar>
Grid<Scalar> upsample_nearest(const Grid<Scalar>& input, Index factor) {
  require_image(input.shape(), "upsample_nearest");
  if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
  if (factor == 1) return Grid<Scalar>(input.shape(), input.data());
  const Index planes = input.batch() * input.channels(), h = input.height(), w = input.width();
  const Index ho = h * factor, wo = w * factor;
  Grid<Scalar> out(image_shape(input.shape(), input.batch(), input.channels(), ho, wo));
  for (Index p = 0; p < planes; ++p) {
    const Scalar* src = input.ptr() + p * h * w;
    Scalar* dst = out.ptr() + p * ho * wo;
    for (Index y = 0; y < ho; ++y) {
      const Scalar* row = src + (y / factor) * w;
      for (Index x = 0; x < wo; ++x) dst[y * wo + x] = row[x / factor];
    }
  }
  return out;
}

template <typename Scalar>
void upsample_nearest_backward(Grid<Scalar>& input, const Grid<Scalar>& output, Index factor) {
  const Index planes = input.batch() * input.channels(), h = input.height(), w = input.width();
  const Index ho = h * factor, wo = w * factor;
  if (output.size() != planes * ho * wo) {
    throw std::invalid_argument("upsample_nearest_backward: output " + shape_string(output.shape()) +
                                " does not match input " + shape_string(input.shape()) + " x" +
                                std::to_string(factor));
  }
  auto& dx = input.grad();
  const auto& dy = output.grad();
  for (Index p = 0; p < planes; ++p) {
    for (Index y = 0; y < ho; ++y) {
      for (Index x = 0; x < wo; ++x) dx[p * h * w + (y / factor) * w + x / factor] += dy[p * ho * wo + y * wo + x];
    }
  }
}

template <typename Scalar>
Grid<Scalar> relu(const Grid<Scalar>& input) {
  if (g_tracing) {
    for (Index i = 0; i < input.size(); ++i) trace(input[i] > Scalar(0));
  }
  return Grid<Scalar>(input.shape(), input.data().max(Scalar(0)));
}

template <typename Scalar>
void relu_backward(Grid<Scalar>& input, const Grid<Scalar>& output) {
  require_same_shape(input, output, "relu_backward");
  input.grad() += (input.data() > Scalar(0)).select(output.grad(), Scalar(0));
}

template <typename Scalar>
Grid<Scalar> add(const Grid<Scalar>& a, const Grid<Scalar>& b) {
  require_same_shape(a, b, "add");
  return Grid<Scalar>(a.shape(), a.data() + b.data());
}

template <typename Scalar>
void add_backward(Grid<Scalar>& a, Grid<Scalar>& b, const Grid<Scalar>& output) {
  a.grad() += output.grad();
  b.grad() += output.grad();
}

template <typename Scalar>
Grid<Scalar> concat_channels(std::span<const Grid<Scalar>* const> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Grid<Scalar>& first = *parts.front();
  require_image(first.shape(), "concat_channels");
  Index total = 0;
  for (const auto* p : parts) {
    require_image(p->shape(), "concat_channels");
    if (p->rank() != first.rank() || p->batch() != first.batch() || p->height() != first.height() ||
        p->width() != first.width()) {
      throw std::invalid_argument("concat_channels: shape mismatch " + shape_string(first.shape()) + " vs " +
                                  shape_string(p->shape()));
    }
    total += p->channels();
  }
  const Index n = first.batch(), hw = first.height() * first.width();
  Grid<Scalar> out(image_shape(first.shape(), n, total, first.height(), first.width()));
  for (Index b = 0; b < n; ++b) {
    Index offset = 0;
    for (const auto* p : parts) {
      const Index len = p->channels() * hw;
      out.data().segment((b * total) * hw + offset, len) = p->data().segment(b * len, len);
      offset += len;
    }
  }
  return out;
}

template <typename Scalar>
void concat_channels_backward(std::span<Grid<Scalar>* const> parts, const Grid<Scalar>& output) {
  const Index n = output.batch(), total = output.channels(), hw = output.height() * output.width();
  const auto& dy = output.grad();
  for (Index b = 0; b < n; ++b) {
    Index offset = 0;
    for (auto* p : parts) {
      const Index len = p->channels() * hw;
      p->grad().segment(b * len, len) += dy.segment((b * total) * hw + offset, len);
      offset += len;
    }
  }
}

template <typename Scalar>
Grid<Scalar> maxpool(const Grid<Scalar>& input, Index kernel, Index stride, MaxPoolCache<Scalar>* cache) {
  require_image(input.shape(), "maxpool");
  if (kernel < 1 || stride < 1) throw std::invalid_argument("maxpool: kernel and stride must be >= 1");
  const Index h = input.height(), w = input.width();
  if (h < kernel || w < kernel) {
    throw std::invalid_argument("maxpool: kernel " + std::to_string(kernel) + " larger than input " +
                                shape_string(input.shape()));
  }
  const Index ho = (h - kernel) / stride + 1, wo = (w - kernel) / stride + 1;
  const Index planes = input.batch() * input.channels();
  Grid<Scalar> out(image_shape(input.shape(), input.batch(), input.channels(), ho, wo));
  if (cache) cache->argmax.assign(static_cast<std::size_t>(out.size()), 0);
  for (Index p = 0; p < planes; ++p) {
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox) {
        Index best = p * h * w + (oy * stride) * w + ox * stride;
        for (Index ky = 0; ky < kernel; ++ky) {
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index idx = p * h * w + (oy * stride + ky) * w + ox * stride + kx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const Index o = (p * ho + oy) * wo + ox;
        out[o] = input[best];
        if (g_tracing) trace(static_cast<std::uint64_t>(best));
        if (cache) cache->argmax[static_cast<std::size_t>(o)] = best;
      }
    }
  }
  return out;
}

template <typename Scalar>
void maxpool_backward(Grid<Scalar>& input, const Grid<Scalar>& output, const MaxPoolCache<Scalar>& cache) {
  if (static_cast<Index>(cache.argmax.size()) != output.size()) {
    throw std::invalid_argument("maxpool_backward: cache does not match output " + shape_string(output.shape()));
  }
  auto& dx = input.grad();
  const auto& dy = output.grad();
  for (Index o = 0; o < output.size(); ++o) dx[cache.argmax[static_cast<std::size_t>(o)]] += dy[o];
}

#define CPNKIT_INSTANTIATE_OPS(S)                                                                                \
  template Grid<S> conv2d(const Grid<S>&, const Grid<S>&, const Grid<S>*, Index, Index);                        \
  template void conv2d_backward(Grid<S>&, Grid<S>&, Grid<S>*, const Grid<S>&, Index, Index, bool);               \
  template Grid<S> batchnorm(const Grid<S>&, const Grid<S>&, const Grid<S>&, RunningStats<S>&, Mode,             \
                             BatchNormCache<S>*, const BatchNormOptions&);                                       \
  template void batchnorm_backward(Grid<S>&, Grid<S>&, Grid<S>&, const Grid<S>&, const BatchNormCache<S>&);      \
  template Grid<S> upsample_nearest(const Grid<S>&, Index);                                                      \
  template void upsample_nearest_backward(Grid<S>&, const Grid<S>&, Index);                                      \
  template Grid<S> relu(const Grid<S>&);                                                                         \
  template void relu_backward(Grid<S>&, const Grid<S>&);                                                         \
  template Grid<S> add(const Grid<S>&, const Grid<S>&);                                                          \
  template void add_backward(Grid<S>&, Grid<S>&, const Grid<S>&);                                                \
  template Grid<S> concat_channels(std::span<const Grid<S>* const>);                                             \
  template void concat_channels_backward(std::span<Grid<S>* const>, const Grid<S>&);                             \
  template Grid<S> maxpool(const Grid<S>&, Index, Index, MaxPoolCache<S>*);                                      \
  template void maxpool_backward(Grid<S>&, const Grid<S>&, const MaxPoolCache<S>&);

CPNKIT_INSTANTIATE_OPS(float)
CPNKIT_INSTANTIATE_OPS(double)

}  // namespace cpnkit
