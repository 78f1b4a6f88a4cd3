#include "dsanet/dsa.hpp"

#include <cmath>
#include <map>
#include <string>

#include "dsanet/serialize.hpp"

namespace dsanet {

std::size_t DsaConfig::split_count() const {
  return static_cast<std::size_t>(
      std::nearbyint(dynamic_fraction * static_cast<double>(channels)));
}

void DsaConfig::validate() const {
  require(snippets >= 1, "DsaConfig: U must be >= 1");
  require(kernel_size >= 1 && kernel_size % 2 == 1,
          "DsaConfig: L must be odd and >= 1, got " +
              std::to_string(kernel_size));
  require(width_factor >= 1, "DsaConfig: alpha must be >= 1");
  require(dynamic_fraction >= 0.0 && dynamic_fraction <= 1.0,
          "DsaConfig: beta must lie in [0, 1]");
  require(split_count() <= channels, "DsaConfig: split exceeds channel count");
}

DsaParams DsaParams::init(const DsaConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t u = cfg.snippets, hidden = cfg.hidden_width(),
                    l = cfg.kernel_size;
  DsaParams p;
  p.w1 = Tensor::zeros({u, hidden});
  const double std1 = std::sqrt(2.0 / static_cast<double>(u));
  for (std::size_t i = 0; i < p.w1.size(); ++i) p.w1[i] = rng.normal(0.0, std1);
  p.b1 = Tensor::zeros({hidden});
  p.gamma = Tensor::ones({hidden});
  p.beta = Tensor::zeros({hidden});
  p.bn = BatchNormState::init(hidden);
  // zero-initialized final layer: every kernel starts at the uniform 1/L row
  p.w2 = Tensor::zeros({hidden, l});
  p.b2 = Tensor::zeros({l});
  return p;
}

void DsaParams::validate(const DsaConfig& cfg) const {
  const std::size_t u = cfg.snippets, hidden = cfg.hidden_width(),
                    l = cfg.kernel_size;
  require(w1.shape() == Shape{u, hidden},
          "DsaParams: w1 shape " + shape_str(w1.shape()) + " vs config " +
              shape_str({u, hidden}));
  require(b1.shape() == Shape{hidden}, "DsaParams: b1 shape mismatch");
  require(gamma.shape() == Shape{hidden} && beta.shape() == Shape{hidden},
          "DsaParams: batch-norm parameter shape mismatch");
  require(bn.running_mean.size() == hidden && bn.running_var.size() == hidden,
          "DsaParams: batch-norm state shape mismatch");
  require(w2.shape() == Shape{hidden, l},
          "DsaParams: w2 shape " + shape_str(w2.shape()) + " vs config " +
              shape_str({hidden, l}));
  require(b2.shape() == Shape{l}, "DsaParams: b2 shape mismatch");
}

std::size_t dsa_param_count(const DsaConfig& cfg) {
  const std::size_t u = cfg.snippets, hidden = cfg.hidden_width(),
                    l = cfg.kernel_size;
  return u * hidden + hidden   // w1, b1
         + 2 * hidden          // gamma, beta
         + hidden * l + l;     // w2, b2
}

DsaParamVars make_dsa_leaves(GradTape& tape, const DsaParams& params) {
  DsaParamVars v;
  v.w1 = tape.leaf(params.w1, "dsa.w1");
  v.b1 = tape.leaf(params.b1, "dsa.b1");
  v.gamma = tape.leaf(params.gamma, "dsa.gamma");
  v.beta = tape.leaf(params.beta, "dsa.beta");
  v.w2 = tape.leaf(params.w2, "dsa.w2");
  v.b2 = tape.leaf(params.b2, "dsa.b2");
  return v;
}

Tensor pool_context(const Tensor& video) {
  require(video.rank() == 6,
          "pool_context: expected (N,C,U,T,H,W), got " +
              shape_str(video.shape()));
  const std::size_t axes[] = {kAxisT, kAxisH, kAxisW};
  return ops::global_avg_pool(video, axes);
}

Var pool_context(GradTape& tape, Var video) {
  require(tape.value(video).rank() == 6,
          "pool_context: expected (N,C,U,T,H,W), got " +
              shape_str(tape.value(video).shape()));
  return tape.global_avg_pool(video, {kAxisT, kAxisH, kAxisW});
}

Var generate_kernel(GradTape& tape, Var ctx, const DsaParamVars& vars,
                    DsaParams& params, const DsaConfig& cfg, Mode mode) {
  const Tensor& c = tape.value(ctx);
  require(c.rank() == 3, "generate_kernel: context must be (N,C,U), got " +
                             shape_str(c.shape()));
  require(c.extent(2) == cfg.snippets,
          "generate_kernel: context has U=" + std::to_string(c.extent(2)) +
              ", config expects U=" + std::to_string(cfg.snippets));
  params.validate(cfg);
  const std::size_t rows = c.extent(0) * c.extent(1);
  require(rows >= 1, "generate_kernel: empty context");

  Var flat = tape.reshape(ctx, {rows, cfg.snippets});
  Var hidden = tape.affine(flat, vars.w1, vars.b1);
  Var normed =
      tape.batch_norm(hidden, vars.gamma, vars.beta, 1, params.bn, mode);
  Var activated = tape.relu(normed);
  Var logits = tape.affine(activated, vars.w2, vars.b2);
  Var kernel = tape.softmax(logits, 1);
  return tape.reshape(kernel, {c.extent(0), c.extent(1), cfg.kernel_size});
}

DynamicKernel generate_kernel(const Tensor& ctx, DsaParams& params,
                              const DsaConfig& cfg, Mode mode) {
  GradTape tape;
  Var c = tape.leaf(ctx, "ctx");
  DsaParamVars vars = make_dsa_leaves(tape, params);
  Var k = generate_kernel(tape, c, vars, params, cfg, mode);
  return DynamicKernel{tape.value(k)};
}

namespace {

void check_segment_args(const Tensor& video, const Tensor& kernel) {
  require(video.rank() == 6, "segment_conv: video must be (N,C,U,T,H,W), got " +
                                 shape_str(video.shape()));
  require(kernel.rank() == 3, "segment_conv: kernel must be (N,C,L), got " +
                                  shape_str(kernel.shape()));
  require(kernel.extent(0) == video.extent(kAxisN) &&
              kernel.extent(1) == video.extent(kAxisC),
          "segment_conv: kernel " + shape_str(kernel.shape()) +
              " does not match video " + shape_str(video.shape()));
  require(kernel.extent(2) % 2 == 1,
          "segment_conv: kernel size must be odd, got " +
              std::to_string(kernel.extent(2)));
}

Tensor segment_conv_forward(const Tensor& video, const Tensor& kernel) {
  check_segment_args(video, kernel);
  const std::size_t n_ext = video.extent(kAxisN), c_ext = video.extent(kAxisC),
                    u_ext = video.extent(kAxisU);
  const std::size_t l_ext = kernel.extent(2);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>((l_ext - 1) / 2);
  std::size_t inner = video.extent(kAxisT) * video.extent(kAxisH) *
                      video.extent(kAxisW);

  Tensor out = Tensor::zeros(video.shape());
  for (std::size_t n = 0; n < n_ext; ++n)
    for (std::size_t c = 0; c < c_ext; ++c) {
      const std::size_t block = ((n * c_ext) + c) * u_ext * inner;
      for (std::size_t u = 0; u < u_ext; ++u)
        for (std::size_t i = 0; i < inner; ++i) {
          double acc = 0.0;
          for (std::size_t l = 0; l < l_ext; ++l) {
            // source snippet u + l - (L-1)/2; zero padding outside [0, U)
            const std::ptrdiff_t su = static_cast<std::ptrdiff_t>(u) +
                                      static_cast<std::ptrdiff_t>(l) - off;
            if (su < 0 || su >= static_cast<std::ptrdiff_t>(u_ext)) continue;
            acc += kernel(n, c, l) *
                   video[block + static_cast<std::size_t>(su) * inner + i];
          }
          out[block + u * inner + i] = acc;
        }
    }
  return out;
}

struct SegmentVjp {
  Tensor gv;
  Tensor gk;
};

SegmentVjp segment_conv_vjp(const Tensor& video, const Tensor& kernel,
                            const Tensor& grad_out) {
  const std::size_t n_ext = video.extent(kAxisN), c_ext = video.extent(kAxisC),
                    u_ext = video.extent(kAxisU);
  const std::size_t l_ext = kernel.extent(2);
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>((l_ext - 1) / 2);
  std::size_t inner = video.extent(kAxisT) * video.extent(kAxisH) *
                      video.extent(kAxisW);

  Tensor gv = Tensor::zeros(video.shape());
  Tensor gk = Tensor::zeros(kernel.shape());
  for (std::size_t n = 0; n < n_ext; ++n)
    for (std::size_t c = 0; c < c_ext; ++c) {
      const std::size_t block = ((n * c_ext) + c) * u_ext * inner;
      for (std::size_t u = 0; u < u_ext; ++u)
        for (std::size_t l = 0; l < l_ext; ++l) {
          const std::ptrdiff_t su = static_cast<std::ptrdiff_t>(u) +
                                    static_cast<std::ptrdiff_t>(l) - off;
          if (su < 0 || su >= static_cast<std::ptrdiff_t>(u_ext)) continue;
          const std::size_t src = block + static_cast<std::size_t>(su) * inner;
          const std::size_t dst = block + u * inner;
          const double kv = kernel(n, c, l);
          double acc = 0.0;
          for (std::size_t i = 0; i < inner; ++i) {
            gv[src + i] += kv * grad_out[dst + i];
            acc += grad_out[dst + i] * video[src + i];
          }
          gk(n, c, l) += acc;
        }
    }
  return {std::move(gv), std::move(gk)};
}

}  // namespace

Tensor segment_conv(const Tensor& video, const DynamicKernel& kernel) {
  return segment_conv_forward(video, kernel.values);
}

Var segment_conv(GradTape& tape, Var video, Var kernel_values) {
  Tensor y = segment_conv_forward(tape.value(video), tape.value(kernel_values));
  return tape.record(
      "segment_conv", std::move(y), {video, kernel_values},
      [video, kernel_values](const Tensor& g, GradTape& t) {
        SegmentVjp v =
            segment_conv_vjp(t.value(video), t.value(kernel_values), g);
        t.accumulate(video, v.gv);
        t.accumulate(kernel_values, v.gk);
      });
}

Var dsa_forward(GradTape& tape, Var video, const DsaParamVars& vars,
                DsaParams& params, const DsaConfig& cfg, Mode mode) {
  const Tensor& v = tape.value(video);
  require(v.rank() == 6, "dsa_forward: input must be (N,C,U,T,H,W), got " +
                             shape_str(v.shape()));
  require(v.extent(kAxisC) == cfg.channels,
          "dsa_forward: input has C=" + std::to_string(v.extent(kAxisC)) +
              ", config expects C=" + std::to_string(cfg.channels));
  require(v.extent(kAxisU) == cfg.snippets,
          "dsa_forward: input has U=" + std::to_string(v.extent(kAxisU)) +
              ", config expects U=" + std::to_string(cfg.snippets));
  cfg.validate();

  const std::size_t split = cfg.split_count();
  if (split == 0) return video;  // empty dynamic branch, exact identity

  auto [dynamic_part, passthrough] = tape.split_channels(video, split);
  Var ctx = cfg.context_from_full_input ? pool_context(tape, video)
                                        : pool_context(tape, dynamic_part);
  Var kernel = generate_kernel(tape, ctx, vars, params, cfg, mode);
  if (cfg.context_from_full_input && split < cfg.channels) {
    // kernels of the pass-through channels are generated but unused
    kernel = tape.split_channels(kernel, split).first;
  }
  Var aggregated = segment_conv(tape, dynamic_part, kernel);
  return tape.concat_channels(aggregated, passthrough);
}

Tensor dsa_forward(const Tensor& video, DsaParams& params, const DsaConfig& cfg,
                   Mode mode) {
  GradTape tape;
  Var in = tape.leaf(video, "video");
  DsaParamVars vars = make_dsa_leaves(tape, params);
  Var out = dsa_forward(tape, in, vars, params, cfg, mode);
  return tape.value(out);
}

void save_dsa_params(const DsaParams& params, const DsaConfig& cfg,
                     const std::filesystem::path& dir) {
  params.validate(cfg);
  std::map<std::string, Tensor> tensors{
      {"w1", params.w1},           {"b1", params.b1},
      {"gamma", params.gamma},     {"beta", params.beta},
      {"w2", params.w2},           {"b2", params.b2},
      {"bn_running_mean", params.bn.running_mean},
      {"bn_running_var", params.bn.running_var}};
  std::map<std::string, double> numbers{
      {"channels", static_cast<double>(cfg.channels)},
      {"snippets", static_cast<double>(cfg.snippets)},
      {"kernel_size", static_cast<double>(cfg.kernel_size)},
      {"width_factor", static_cast<double>(cfg.width_factor)},
      {"dynamic_fraction", cfg.dynamic_fraction},
      {"context_from_full_input", cfg.context_from_full_input ? 1.0 : 0.0},
      {"bn_momentum", params.bn.momentum},
      {"bn_eps", params.bn.eps}};
  save_bundle(dir, tensors, numbers);
}

std::pair<DsaParams, DsaConfig> load_dsa_params(
    const std::filesystem::path& dir) {
  auto [tensors, numbers] = load_bundle(dir);
  DsaConfig cfg;
  cfg.channels = static_cast<std::size_t>(numbers.at("channels"));
  cfg.snippets = static_cast<std::size_t>(numbers.at("snippets"));
  cfg.kernel_size = static_cast<std::size_t>(numbers.at("kernel_size"));
  cfg.width_factor = static_cast<std::size_t>(numbers.at("width_factor"));
  cfg.dynamic_fraction = numbers.at("dynamic_fraction");
  cfg.context_from_full_input = numbers.at("context_from_full_input") != 0.0;
  DsaParams p;
  p.w1 = tensors.at("w1");
  p.b1 = tensors.at("b1");
  p.gamma = tensors.at("gamma");
  p.beta = tensors.at("beta");
  p.w2 = tensors.at("w2");
  p.b2 = tensors.at("b2");
  p.bn.running_mean = tensors.at("bn_running_mean");
  p.bn.running_var = tensors.at("bn_running_var");
  p.bn.momentum = numbers.at("bn_momentum");
  p.bn.eps = numbers.at("bn_eps");
  p.validate(cfg);
  return {std::move(p), cfg};
}

DsaCost dsa_flops(const DsaConfig& cfg, const Shape& feature_shape) {
  require(feature_shape.size() == 6,
          "dsa_flops: feature shape must be (N,C,U,T,H,W)");
  require(feature_shape[kAxisC] == cfg.channels,
          "dsa_flops: feature C=" + std::to_string(feature_shape[kAxisC]) +
              " vs config C=" + std::to_string(cfg.channels));
  require(feature_shape[kAxisU] == cfg.snippets,
          "dsa_flops: feature U vs config U mismatch");
  cfg.validate();

  const unsigned long long split = cfg.split_count();
  DsaCost cost;
  if (split == 0) return cost;

  const unsigned long long n = feature_shape[kAxisN];
  const unsigned long long u = cfg.snippets;
  const unsigned long long volume = feature_shape[kAxisT] *
                                    feature_shape[kAxisH] *
                                    feature_shape[kAxisW];
  const unsigned long long hidden = cfg.hidden_width();
  const unsigned long long l = cfg.kernel_size;

  cost.pool_macs = n * split * u * volume;
  cost.mlp_macs = n * split * (u * hidden + hidden + hidden * l);
  cost.softmax_macs = n * split * 2 * l;
  cost.segment_macs = n * split * u * volume * l;
  return cost;
}

}  // namespace dsanet
