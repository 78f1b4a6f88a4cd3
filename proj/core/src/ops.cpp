#include "dsanet/ops.hpp"

#include <cmath>
#include <string>

namespace dsanet {

BatchNormState BatchNormState::init(std::size_t features, double momentum,
                                    double eps) {
  BatchNormState s;
  s.running_mean = Tensor::zeros({features});
  s.running_var = Tensor::ones({features});
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

namespace ops {

namespace {

// Odometer-style advance over a multi-index; returns false after the last one.
bool advance_index(std::vector<std::size_t>& ix, std::span<const std::size_t> extents) {
  for (std::size_t a = extents.size(); a-- > 0;) {
    if (++ix[a] < extents[a]) return true;
    ix[a] = 0;
  }
  return false;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  require(t.rank() == rank, std::string(what) + ": expected rank " +
                                std::to_string(rank) + ", got shape " +
                                shape_str(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), "add: shape mismatch " + shape_str(a.shape()) +
                               " vs " + shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return out;
}

Tensor relu_vjp(const Tensor& x, const Tensor& grad_out) {
  Tensor gx = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    gx[i] = x[i] > 0.0 ? grad_out[i] : 0.0;
  }
  return gx;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul lhs");
  require_rank(b, 2, "matmul rhs");
  require(a.extent(1) == b.extent(0),
          "matmul: inner extents disagree, " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  }
  return out;
}

Tensor transpose2d(const Tensor& a) {
  require_rank(a, 2, "transpose2d");
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor out = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  require_rank(b, 1, "affine bias");
  const std::size_t rows = y.extent(0), cols = y.extent(1);
  require(b.extent(0) == cols, "affine: bias length " +
                                   std::to_string(b.extent(0)) +
                                   " vs output width " + std::to_string(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] += b[j];
  }
  return y;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  require(axis < x.rank(), "softmax: axis " + std::to_string(axis) +
                               " invalid for shape " + shape_str(x.shape()));
  const auto& shape = x.shape();
  const std::size_t len = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];

  Tensor out = Tensor::zeros(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double mx = x[base];
      for (std::size_t j = 1; j < len; ++j) {
        mx = std::max(mx, x[base + j * inner]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        double e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        denom += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= denom;
    }
  }
  return out;
}

Tensor softmax_vjp(const Tensor& y, std::size_t axis, const Tensor& grad_out) {
  require(y.same_shape(grad_out), "softmax_vjp: shape mismatch");
  const auto& shape = y.shape();
  const std::size_t len = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];

  Tensor gx = Tensor::zeros(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        dot += grad_out[base + j * inner] * y[base + j * inner];
      }
      for (std::size_t j = 0; j < len; ++j) {
        const std::size_t k = base + j * inner;
        gx[k] = y[k] * (grad_out[k] - dot);
      }
    }
  }
  return gx;
}

Tensor global_avg_pool(const Tensor& x, std::span<const std::size_t> axes) {
  require(!axes.empty(), "global_avg_pool: axes must be nonempty");
  std::vector<bool> pooled(x.rank(), false);
  for (std::size_t a : axes) {
    require(a < x.rank(), "global_avg_pool: axis " + std::to_string(a) +
                              " invalid for shape " + shape_str(x.shape()));
    require(!pooled[a], "global_avg_pool: duplicate axis");
    pooled[a] = true;
  }

  Shape keep_shape, pool_shape;
  std::vector<std::size_t> keep_axes, pool_axes;
  for (std::size_t a = 0; a < x.rank(); ++a) {
    (pooled[a] ? pool_shape : keep_shape).push_back(x.shape()[a]);
    (pooled[a] ? pool_axes : keep_axes).push_back(a);
  }
  const std::size_t count = numel(pool_shape);
  require(count > 0, "global_avg_pool: empty pooled slice");

  Tensor out = Tensor::zeros(keep_shape.empty() ? Shape{1} : keep_shape);
  const auto in_strides = x.strides();

  std::vector<std::size_t> keep_ix(keep_axes.size(), 0);
  std::vector<double> slice(count);
  std::size_t out_pos = 0;
  do {
    std::size_t base = 0;
    for (std::size_t a = 0; a < keep_axes.size(); ++a) {
      base += keep_ix[a] * in_strides[keep_axes[a]];
    }
    std::vector<std::size_t> pool_ix(pool_axes.size(), 0);
    std::size_t s = 0;
    do {
      std::size_t off = base;
      for (std::size_t a = 0; a < pool_axes.size(); ++a) {
        off += pool_ix[a] * in_strides[pool_axes[a]];
      }
      slice[s++] = x[off];
    } while (advance_index(pool_ix, pool_shape));
    out[out_pos++] = stable_sum(slice) / static_cast<double>(count);
  } while (advance_index(keep_ix, keep_shape));
  return out;
}

Tensor global_avg_pool_vjp(const Shape& input_shape,
                           std::span<const std::size_t> axes,
                           const Tensor& grad_out) {
  std::vector<bool> pooled(input_shape.size(), false);
  for (std::size_t a : axes) pooled[a] = true;

  Shape keep_shape, pool_shape;
  std::vector<std::size_t> keep_axes, pool_axes;
  for (std::size_t a = 0; a < input_shape.size(); ++a) {
    (pooled[a] ? pool_shape : keep_shape).push_back(input_shape[a]);
    (pooled[a] ? pool_axes : keep_axes).push_back(a);
  }
  const double inv_count = 1.0 / static_cast<double>(numel(pool_shape));

  Tensor gx = Tensor::zeros(input_shape);
  std::vector<std::size_t> in_strides(input_shape.size(), 1);
  for (std::size_t a = input_shape.size(); a-- > 1;) {
    in_strides[a - 1] = in_strides[a] * input_shape[a];
  }

  std::vector<std::size_t> keep_ix(keep_axes.size(), 0);
  std::size_t out_pos = 0;
  do {
    std::size_t base = 0;
    for (std::size_t a = 0; a < keep_axes.size(); ++a) {
      base += keep_ix[a] * in_strides[keep_axes[a]];
    }
    const double g = grad_out[out_pos++] * inv_count;
    std::vector<std::size_t> pool_ix(pool_axes.size(), 0);
    do {
      std::size_t off = base;
      for (std::size_t a = 0; a < pool_axes.size(); ++a) {
        off += pool_ix[a] * in_strides[pool_axes[a]];
      }
      gx[off] += g;
    } while (advance_index(pool_ix, pool_shape));
  } while (advance_index(keep_ix, keep_shape));
  return gx;
}

namespace {

void check_bn_args(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   std::size_t feature_axis) {
  require(feature_axis < x.rank(), "batch_norm: feature axis out of range");
  const std::size_t features = x.shape()[feature_axis];
  require(gamma.rank() == 1 && gamma.extent(0) == features,
          "batch_norm: gamma length " + shape_str(gamma.shape()) +
              " vs feature extent " + std::to_string(features));
  require(beta.rank() == 1 && beta.extent(0) == features,
          "batch_norm: beta length " + shape_str(beta.shape()) +
              " vs feature extent " + std::to_string(features));
}

std::size_t feature_stride(const Tensor& x, std::size_t feature_axis) {
  return x.strides()[feature_axis];
}

}  // namespace

BnForward batch_norm_train(const Tensor& x, const Tensor& gamma,
                           const Tensor& beta, std::size_t feature_axis,
                           BatchNormState& state) {
  check_bn_args(x, gamma, beta, feature_axis);
  const std::size_t features = x.shape()[feature_axis];
  require(state.running_mean.size() == features &&
              state.running_var.size() == features,
          "batch_norm: running stats sized for " +
              std::to_string(state.running_mean.size()) + " features, need " +
              std::to_string(features));
  const std::size_t m = x.size() / features;
  require(m >= 2, "batch_norm train mode needs batch count >= 2, got " +
                      std::to_string(m));
  const std::size_t fs = feature_stride(x, feature_axis);

  Tensor mean = Tensor::zeros({features});
  Tensor var = Tensor::zeros({features});
  for (std::size_t i = 0; i < x.size(); ++i) mean[(i / fs) % features] += x[i];
  for (std::size_t f = 0; f < features; ++f) {
    mean[f] /= static_cast<double>(m);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double c = x[i] - mean[(i / fs) % features];
    var[(i / fs) % features] += c * c;
  }
  for (std::size_t f = 0; f < features; ++f) var[f] /= static_cast<double>(m);

  Tensor y = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t f = (i / fs) % features;
    const double xhat = (x[i] - mean[f]) / std::sqrt(var[f] + state.eps);
    y[i] = gamma[f] * xhat + beta[f];
  }

  const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
  for (std::size_t f = 0; f < features; ++f) {
    state.running_mean[f] =
        (1.0 - state.momentum) * state.running_mean[f] + state.momentum * mean[f];
    state.running_var[f] = (1.0 - state.momentum) * state.running_var[f] +
                           state.momentum * var[f] * unbias;
  }
  return {std::move(y), std::move(mean), std::move(var)};
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::size_t feature_axis, const BatchNormState& state) {
  check_bn_args(x, gamma, beta, feature_axis);
  const std::size_t features = x.shape()[feature_axis];
  require(state.running_mean.size() == features &&
              state.running_var.size() == features,
          "batch_norm: running stats size mismatch");
  const std::size_t fs = feature_stride(x, feature_axis);
  Tensor y = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t f = (i / fs) % features;
    y[i] = gamma[f] * (x[i] - state.running_mean[f]) /
               std::sqrt(state.running_var[f] + state.eps) +
           beta[f];
  }
  return y;
}

BnVjp batch_norm_train_vjp(const Tensor& x, const Tensor& gamma,
                           std::size_t feature_axis, const Tensor& mean,
                           const Tensor& var, double eps,
                           const Tensor& grad_out) {
  const std::size_t features = x.shape()[feature_axis];
  const std::size_t m = x.size() / features;
  const std::size_t fs = feature_stride(x, feature_axis);
  const double inv_m = 1.0 / static_cast<double>(m);

  std::vector<double> istd(features);
  for (std::size_t f = 0; f < features; ++f) {
    istd[f] = 1.0 / std::sqrt(var[f] + eps);
  }

  // Per-feature reductions needed by the chain rule through mean and var.
  Tensor sum_g(Tensor::zeros({features}));        // sum of g*gamma
  Tensor sum_gxc(Tensor::zeros({features}));      // sum of g*gamma*(x-mean)
  Tensor sum_xc(Tensor::zeros({features}));       // sum of (x-mean)
  Tensor ggamma = Tensor::zeros({features});
  Tensor gbeta = Tensor::zeros({features});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t f = (i / fs) % features;
    const double xc = x[i] - mean[f];
    const double gxhat = grad_out[i] * gamma[f];
    sum_g[f] += gxhat;
    sum_gxc[f] += gxhat * xc;
    sum_xc[f] += xc;
    ggamma[f] += grad_out[i] * xc * istd[f];
    gbeta[f] += grad_out[i];
  }

  std::vector<double> gvar(features), gmean(features);
  for (std::size_t f = 0; f < features; ++f) {
    gvar[f] = sum_gxc[f] * (-0.5) * istd[f] * istd[f] * istd[f];
    gmean[f] = -istd[f] * sum_g[f] + gvar[f] * (-2.0) * inv_m * sum_xc[f];
  }

  Tensor gx = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t f = (i / fs) % features;
    const double xc = x[i] - mean[f];
    gx[i] = grad_out[i] * gamma[f] * istd[f] + gvar[f] * 2.0 * xc * inv_m +
            gmean[f] * inv_m;
  }
  return {std::move(gx), std::move(ggamma), std::move(gbeta)};
}

BnVjp batch_norm_eval_vjp(const Tensor& x, const Tensor& gamma,
                          std::size_t feature_axis,
                          const BatchNormState& state, const Tensor& grad_out) {
  const std::size_t features = x.shape()[feature_axis];
  const std::size_t fs = feature_stride(x, feature_axis);
  Tensor gx = Tensor::zeros(x.shape());
  Tensor ggamma = Tensor::zeros({features});
  Tensor gbeta = Tensor::zeros({features});
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t f = (i / fs) % features;
    const double istd = 1.0 / std::sqrt(state.running_var[f] + state.eps);
    const double xhat = (x[i] - state.running_mean[f]) * istd;
    gx[i] = grad_out[i] * gamma[f] * istd;
    ggamma[f] += grad_out[i] * xhat;
    gbeta[f] += grad_out[i];
  }
  return {std::move(gx), std::move(ggamma), std::move(gbeta)};
}

namespace {

struct VideoDims {
  std::size_t n, c, u, t, h, w;
};

VideoDims video_dims(const Tensor& x, const char* what) {
  require_rank(x, 6, what);
  const auto& s = x.shape();
  return {s[0], s[1], s[2], s[3], s[4], s[5]};
}

std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                            std::size_t pad, const char* what) {
  require(stride >= 1, std::string(what) + ": stride must be >= 1");
  require(in + 2 * pad >= k, std::string(what) + ": kernel extent " +
                                 std::to_string(k) +
                                 " larger than padded input " +
                                 std::to_string(in + 2 * pad));
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

Tensor conv_spatial(const Tensor& x, const Tensor& w, std::size_t stride,
                    std::size_t pad) {
  const VideoDims d = video_dims(x, "conv_spatial input");
  require_rank(w, 4, "conv_spatial weight");
  const std::size_t co = w.extent(0), ci = w.extent(1), kh = w.extent(2),
                    kw = w.extent(3);
  require(ci == d.c, "conv_spatial: input has " + std::to_string(d.c) +
                         " channels, weight expects " + std::to_string(ci));
  const std::size_t oh = conv_out_extent(d.h, kh, stride, pad, "conv_spatial");
  const std::size_t ow = conv_out_extent(d.w, kw, stride, pad, "conv_spatial");

  Tensor out = Tensor::zeros({d.n, co, d.u, d.t, oh, ow});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t u = 0; u < d.u; ++u)
        for (std::size_t t = 0; t < d.t; ++t)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t z = 0; z < ow; ++z) {
              double acc = 0.0;
              for (std::size_t ic = 0; ic < ci; ++ic)
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(y * stride + ky) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                  for (std::size_t kz = 0; kz < kw; ++kz) {
                    const std::ptrdiff_t iz =
                        static_cast<std::ptrdiff_t>(z * stride + kz) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(d.w)) continue;
                    acc += w(c, ic, ky, kz) *
                           x(n, ic, u, t, static_cast<std::size_t>(iy),
                             static_cast<std::size_t>(iz));
                  }
                }
              out(n, c, u, t, y, z) = acc;
            }
  return out;
}

ConvVjp conv_spatial_vjp(const Tensor& x, const Tensor& w, std::size_t stride,
                         std::size_t pad, const Tensor& grad_out) {
  const VideoDims d = video_dims(x, "conv_spatial input");
  const std::size_t co = w.extent(0), ci = w.extent(1), kh = w.extent(2),
                    kw = w.extent(3);
  const std::size_t oh = grad_out.extent(4), ow = grad_out.extent(5);

  Tensor gx = Tensor::zeros(x.shape());
  Tensor gw = Tensor::zeros(w.shape());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t u = 0; u < d.u; ++u)
        for (std::size_t t = 0; t < d.t; ++t)
          for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t z = 0; z < ow; ++z) {
              const double g = grad_out(n, c, u, t, y, z);
              for (std::size_t ic = 0; ic < ci; ++ic)
                for (std::size_t ky = 0; ky < kh; ++ky) {
                  const std::ptrdiff_t iy =
                      static_cast<std::ptrdiff_t>(y * stride + ky) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.h)) continue;
                  for (std::size_t kz = 0; kz < kw; ++kz) {
                    const std::ptrdiff_t iz =
                        static_cast<std::ptrdiff_t>(z * stride + kz) -
                        static_cast<std::ptrdiff_t>(pad);
                    if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(d.w)) continue;
                    const std::size_t ih = static_cast<std::size_t>(iy);
                    const std::size_t iw = static_cast<std::size_t>(iz);
                    gw(c, ic, ky, kz) += g * x(n, ic, u, t, ih, iw);
                    gx(n, ic, u, t, ih, iw) += g * w(c, ic, ky, kz);
                  }
                }
            }
  return {std::move(gx), std::move(gw)};
}

Tensor conv_temporal(const Tensor& x, const Tensor& w, std::size_t stride,
                     std::size_t pad) {
  const VideoDims d = video_dims(x, "conv_temporal input");
  require_rank(w, 3, "conv_temporal weight");
  const std::size_t co = w.extent(0), ci = w.extent(1), kt = w.extent(2);
  require(ci == d.c, "conv_temporal: input has " + std::to_string(d.c) +
                         " channels, weight expects " + std::to_string(ci));
  const std::size_t ot = conv_out_extent(d.t, kt, stride, pad, "conv_temporal");

  Tensor out = Tensor::zeros({d.n, co, d.u, ot, d.h, d.w});
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t u = 0; u < d.u; ++u)
        for (std::size_t t = 0; t < ot; ++t)
          for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t z = 0; z < d.w; ++z) {
              double acc = 0.0;
              for (std::size_t ic = 0; ic < ci; ++ic)
                for (std::size_t k = 0; k < kt; ++k) {
                  const std::ptrdiff_t it =
                      static_cast<std::ptrdiff_t>(t * stride + k) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (it < 0 || it >= static_cast<std::ptrdiff_t>(d.t)) continue;
                  acc += w(c, ic, k) *
                         x(n, ic, u, static_cast<std::size_t>(it), y, z);
                }
              out(n, c, u, t, y, z) = acc;
            }
  return out;
}

ConvVjp conv_temporal_vjp(const Tensor& x, const Tensor& w, std::size_t stride,
                          std::size_t pad, const Tensor& grad_out) {
  const VideoDims d = video_dims(x, "conv_temporal input");
  const std::size_t co = w.extent(0), ci = w.extent(1), kt = w.extent(2);
  const std::size_t ot = grad_out.extent(3);

  Tensor gx = Tensor::zeros(x.shape());
  Tensor gw = Tensor::zeros(w.shape());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < co; ++c)
      for (std::size_t u = 0; u < d.u; ++u)
        for (std::size_t t = 0; t < ot; ++t)
          for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t z = 0; z < d.w; ++z) {
              const double g = grad_out(n, c, u, t, y, z);
              for (std::size_t ic = 0; ic < ci; ++ic)
                for (std::size_t k = 0; k < kt; ++k) {
                  const std::ptrdiff_t it =
                      static_cast<std::ptrdiff_t>(t * stride + k) -
                      static_cast<std::ptrdiff_t>(pad);
                  if (it < 0 || it >= static_cast<std::ptrdiff_t>(d.t)) continue;
                  const std::size_t tt = static_cast<std::size_t>(it);
                  gw(c, ic, k) += g * x(n, ic, u, tt, y, z);
                  gx(n, ic, u, tt, y, z) += g * w(c, ic, k);
                }
            }
  return {std::move(gx), std::move(gw)};
}

Tensor slice_channels(const Tensor& x, std::size_t lo, std::size_t hi) {
  require(x.rank() >= 2, "slice_channels: need rank >= 2, got " +
                             shape_str(x.shape()));
  const std::size_t channels = x.shape()[1];
  require(lo <= hi && hi <= channels,
          "slice_channels: range [" + std::to_string(lo) + "," +
              std::to_string(hi) + ") invalid for " + std::to_string(channels) +
              " channels");
  Shape out_shape = x.shape();
  out_shape[1] = hi - lo;
  std::size_t outer = x.shape()[0], inner = 1;
  for (std::size_t a = 2; a < x.rank(); ++a) inner *= x.shape()[a];

  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t n = 0; n < outer; ++n) {
    for (std::size_t c = lo; c < hi; ++c) {
      const std::size_t src = (n * channels + c) * inner;
      const std::size_t dst = (n * (hi - lo) + (c - lo)) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[dst + i] = x[src + i];
    }
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t count) {
  require(x.rank() >= 2, "split_channels: need rank >= 2");
  const std::size_t channels = x.shape()[1];
  require(count <= channels, "split_channels: count " + std::to_string(count) +
                                 " exceeds " + std::to_string(channels) +
                                 " channels");
  return {slice_channels(x, 0, count), slice_channels(x, count, channels)};
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() >= 2 && a.rank() == b.rank(),
          "concat_channels: rank mismatch " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  for (std::size_t ax = 0; ax < a.rank(); ++ax) {
    if (ax == 1) continue;
    require(a.shape()[ax] == b.shape()[ax],
            "concat_channels: non-channel extents differ, " +
                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t ca = a.shape()[1], cb = b.shape()[1];
  Shape out_shape = a.shape();
  out_shape[1] = ca + cb;
  std::size_t outer = a.shape()[0], inner = 1;
  for (std::size_t ax = 2; ax < a.rank(); ++ax) inner *= a.shape()[ax];

  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t n = 0; n < outer; ++n) {
    for (std::size_t c = 0; c < ca; ++c) {
      const std::size_t src = (n * ca + c) * inner;
      const std::size_t dst = (n * (ca + cb) + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[dst + i] = a[src + i];
    }
    for (std::size_t c = 0; c < cb; ++c) {
      const std::size_t src = (n * cb + c) * inner;
      const std::size_t dst = (n * (ca + cb) + ca + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[dst + i] = b[src + i];
    }
  }
  return out;
}

namespace {

// groups: 0 = shift +1 along T, 1 = shift -1, 2 = pass through
std::size_t shift_group(std::size_t c, std::size_t shifted) {
  if (c < shifted) return 0;
  if (c < 2 * shifted) return 1;
  return 2;
}

}  // namespace

Tensor temporal_shift(const Tensor& x, double fraction) {
  const VideoDims d = video_dims(x, "temporal_shift input");
  require(fraction >= 0.0 && 2.0 * fraction <= 1.0,
          "temporal_shift: fraction must satisfy 0 <= 2*fraction <= 1");
  const std::size_t shifted =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d.c)));

  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t group = shift_group(c, shifted);
      for (std::size_t u = 0; u < d.u; ++u)
        for (std::size_t t = 0; t < d.t; ++t) {
          // source frame inside the same snippet, or zero fill
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t);
          if (group == 0) src -= 1;
          if (group == 1) src += 1;
          if (src < 0 || src >= static_cast<std::ptrdiff_t>(d.t)) continue;
          for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t z = 0; z < d.w; ++z)
              out(n, c, u, t, y, z) =
                  x(n, c, u, static_cast<std::size_t>(src), y, z);
        }
    }
  return out;
}

Tensor temporal_shift_vjp(const Tensor& grad_out, double fraction) {
  const VideoDims d = video_dims(grad_out, "temporal_shift grad");
  const std::size_t shifted =
      static_cast<std::size_t>(std::floor(fraction * static_cast<double>(d.c)));

  Tensor gx = Tensor::zeros(grad_out.shape());
  for (std::size_t n = 0; n < d.n; ++n)
    for (std::size_t c = 0; c < d.c; ++c) {
      const std::size_t group = shift_group(c, shifted);
      for (std::size_t u = 0; u < d.u; ++u)
        for (std::size_t t = 0; t < d.t; ++t) {
          // x[t] fed out[t+1] (group 0) or out[t-1] (group 1)
          std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(t);
          if (group == 0) dst += 1;
          if (group == 1) dst -= 1;
          if (dst < 0 || dst >= static_cast<std::ptrdiff_t>(d.t)) continue;
          for (std::size_t y = 0; y < d.h; ++y)
            for (std::size_t z = 0; z < d.w; ++z)
              gx(n, c, u, t, y, z) =
                  grad_out(n, c, u, static_cast<std::size_t>(dst), y, z);
        }
    }
  return gx;
}

Tensor permute(const Tensor& x, std::span<const std::size_t> perm) {
  require(perm.size() == x.rank(), "permute: perm rank mismatch");
  std::vector<bool> seen(x.rank(), false);
  for (std::size_t a : perm) {
    require(a < x.rank() && !seen[a], "permute: not a permutation");
    seen[a] = true;
  }
  Shape out_shape(x.rank());
  for (std::size_t a = 0; a < x.rank(); ++a) out_shape[a] = x.shape()[perm[a]];

  Tensor out = Tensor::zeros(out_shape);
  const auto in_strides = x.strides();
  std::vector<std::size_t> out_ix(x.rank(), 0);
  std::size_t pos = 0;
  do {
    std::size_t off = 0;
    for (std::size_t a = 0; a < x.rank(); ++a) {
      off += out_ix[a] * in_strides[perm[a]];
    }
    out[pos++] = x[off];
  } while (advance_index(out_ix, out_shape));
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) +
                                        " has " + std::to_string(x.size()) +
                                        " elements, target " +
                                        shape_str(shape) + " has " +
                                        std::to_string(numel(shape)));
  std::vector<double> data(x.data().begin(), x.data().end());
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace ops
}  // namespace dsanet
