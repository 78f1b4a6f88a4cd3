#pragma once

#include <cstddef>
#include <filesystem>
#include <utility>

#include "dsanet/autograd.hpp"
#include "dsanet/ops.hpp"
#include "dsanet/rng.hpp"
#include "dsanet/tensor.hpp"

namespace dsanet {

// Dynamic segment aggregation over the snippet axis U: a per-channel, per-
// sample kernel of L taps is generated from pooled snippet context and
// convolved along U over the first round(beta*C) channels.
struct DsaConfig {
  std::size_t channels = 0;         // C at the insertion point
  std::size_t snippets = 4;         // U
  std::size_t kernel_size = 3;      // L, odd
  std::size_t width_factor = 2;     // alpha: MLP hidden width = U * alpha
  double dynamic_fraction = 0.125;  // beta in [0, 1]
  // When set, kernel context pools the whole input rather than the dynamic
  // split alone (the split's own rows still select the kernels).
  bool context_from_full_input = false;

  std::size_t hidden_width() const { return snippets * width_factor; }
  // round(beta*C), ties to even
  std::size_t split_count() const;
  void validate() const;
};

// Kernel-generator MLP parameters, shared across channels and batch entries:
// context (U) -> affine -> batch norm -> relu -> affine -> logits (L).
struct DsaParams {
  Tensor w1;     // (U, U*alpha)
  Tensor b1;     // (U*alpha)
  Tensor gamma;  // (U*alpha)
  Tensor beta;   // (U*alpha)
  BatchNormState bn;
  Tensor w2;  // (U*alpha, L)
  Tensor b2;  // (L)

  static DsaParams init(const DsaConfig& cfg, Rng& rng);
  void validate(const DsaConfig& cfg) const;
};

// Learnable scalar count of one module (independent of C).
std::size_t dsa_param_count(const DsaConfig& cfg);

// Softmax-normalized aggregation weights, shape (N, C_split, L); every
// (n, c) row sums to 1 and is strictly positive.
struct DynamicKernel {
  Tensor values;
};

// Parameter leaves of one DSA module on a tape.
struct DsaParamVars {
  Var w1, b1, gamma, beta, w2, b2;
};
DsaParamVars make_dsa_leaves(GradTape& tape, const DsaParams& params);

// Mean over (T, H, W) per (n, c, u): (N,C,U,T,H,W) -> (N,C,U).
Tensor pool_context(const Tensor& video);
Var pool_context(GradTape& tape, Var video);

// K = softmax(MLP(context)) per (n, c) row. Batch norm inside the MLP runs
// over the flattened N*C batch of context vectors; train mode updates the
// running stats in `params`.
DynamicKernel generate_kernel(const Tensor& ctx, DsaParams& params,
                              const DsaConfig& cfg, Mode mode);
Var generate_kernel(GradTape& tape, Var ctx, const DsaParamVars& vars,
                    DsaParams& params, const DsaConfig& cfg, Mode mode);

// Channel-wise, zero-padded, centered convolution along U:
//   O[n,c,u,...] = sum_l K[n,c,l] * V[n,c, u + l - (L-1)/2, ...]
Tensor segment_conv(const Tensor& video, const DynamicKernel& kernel);
Var segment_conv(GradTape& tape, Var video, Var kernel_values);

// Full module: split off round(beta*C) channels, aggregate them with the
// generated kernel, concatenate the untouched rest. beta = 0 is a bitwise
// identity.
Tensor dsa_forward(const Tensor& video, DsaParams& params, const DsaConfig& cfg,
                   Mode mode);
Var dsa_forward(GradTape& tape, Var video, const DsaParamVars& vars,
                DsaParams& params, const DsaConfig& cfg, Mode mode);

// One .dst file per parameter tensor (running stats included) plus a JSON
// manifest carrying the configuration fields.
void save_dsa_params(const DsaParams& params, const DsaConfig& cfg,
                     const std::filesystem::path& dir);
std::pair<DsaParams, DsaConfig> load_dsa_params(const std::filesystem::path& dir);

// Analytic multiply-add count of one module application, by component.
struct DsaCost {
  unsigned long long pool_macs = 0;
  unsigned long long mlp_macs = 0;
  unsigned long long softmax_macs = 0;
  unsigned long long segment_macs = 0;
  unsigned long long total() const {
    return pool_macs + mlp_macs + softmax_macs + segment_macs;
  }
};
DsaCost dsa_flops(const DsaConfig& cfg, const Shape& feature_shape);

}  // namespace dsanet
