#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "dsanet/tensor.hpp"

namespace dsanet {

enum class Mode { kTrain, kEval };

// Running statistics for one batch-norm site. Normalization uses biased batch
// variance; the running variance is updated with the unbiased estimate
// (requires batch count > 1 in train mode).
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState init(std::size_t features, double momentum = 0.1,
                             double eps = 1e-5);
};

namespace ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
// Subgradient at 0 is 0: gradient passes only where x > 0.
Tensor relu_vjp(const Tensor& x, const Tensor& grad_out);

// ---- linear ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose2d(const Tensor& a);
// y = x @ w + b broadcast over rows; x (B,F), w (F,K), b (K)
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- softmax ----
Tensor softmax(const Tensor& x, std::size_t axis);
// vjp in terms of the forward output y
Tensor softmax_vjp(const Tensor& y, std::size_t axis, const Tensor& grad_out);

// ---- pooling ----
// Mean over the listed axes; pooled axes are removed from the shape. The
// per-slice reduction uses stable_sum, so the result depends only on the
// multiset of pooled values.
Tensor global_avg_pool(const Tensor& x, std::span<const std::size_t> axes);
Tensor global_avg_pool_vjp(const Shape& input_shape,
                           std::span<const std::size_t> axes,
                           const Tensor& grad_out);

// ---- batch normalization over all axes except `feature_axis` ----
struct BnForward {
  Tensor y;
  Tensor mean;  // per-feature batch mean (train) or running mean (eval)
  Tensor var;   // per-feature biased batch variance (train) or running var
};
BnForward batch_norm_train(const Tensor& x, const Tensor& gamma,
                           const Tensor& beta, std::size_t feature_axis,
                           BatchNormState& state);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       std::size_t feature_axis, const BatchNormState& state);
struct BnVjp {
  Tensor gx;
  Tensor ggamma;
  Tensor gbeta;
};
BnVjp batch_norm_train_vjp(const Tensor& x, const Tensor& gamma,
                           std::size_t feature_axis, const Tensor& mean,
                           const Tensor& var, double eps,
                           const Tensor& grad_out);
BnVjp batch_norm_eval_vjp(const Tensor& x, const Tensor& gamma,
                          std::size_t feature_axis,
                          const BatchNormState& state, const Tensor& grad_out);

// ---- convolutions on (N, C, U, T, H, W) video features ----
struct ConvVjp {
  Tensor gx;
  Tensor gw;
};
// 2D convolution applied at every (n, u, t); w is (Cout, Cin, kh, kw),
// zero padding, single stride for both spatial axes.
Tensor conv_spatial(const Tensor& x, const Tensor& w, std::size_t stride,
                    std::size_t pad);
ConvVjp conv_spatial_vjp(const Tensor& x, const Tensor& w, std::size_t stride,
                         std::size_t pad, const Tensor& grad_out);
// 1D convolution along T within each snippet; w is (Cout, Cin, kt).
Tensor conv_temporal(const Tensor& x, const Tensor& w, std::size_t stride,
                     std::size_t pad);
ConvVjp conv_temporal_vjp(const Tensor& x, const Tensor& w, std::size_t stride,
                          std::size_t pad, const Tensor& grad_out);

// ---- channel split / concat (channel axis 1, any rank >= 2) ----
Tensor slice_channels(const Tensor& x, std::size_t lo, std::size_t hi);
std::pair<Tensor, Tensor> split_channels(const Tensor& x, std::size_t count);
Tensor concat_channels(const Tensor& a, const Tensor& b);

// ---- temporal shift (TSM-style), within each snippet ----
// First floor(fraction*C) channels shift +1 along T, the next group -1,
// zero filled at the boundary.
Tensor temporal_shift(const Tensor& x, double fraction);
Tensor temporal_shift_vjp(const Tensor& grad_out, double fraction);

// ---- layout ----
Tensor permute(const Tensor& x, std::span<const std::size_t> perm);
Tensor reshape(const Tensor& x, Shape shape);

}  // namespace ops
}  // namespace dsanet
