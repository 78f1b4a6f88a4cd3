#include "dsanet/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dsanet {

void BlockSpec::validate() const {
  require(channels >= 1, "BlockSpec: channels must be >= 1");
  require(spatial_kernel == 1 || spatial_kernel == 3,
          "BlockSpec: spatial kernel must be 1 or 3");
  if (kind == BlockKind::kI3dBottleneck) {
    require(mid_channels >= 1, "BlockSpec: bottleneck needs mid_channels");
  }
  if (kind == BlockKind::kTsmBasic) {
    require(shift_fraction >= 0.0 && 2.0 * shift_fraction <= 1.0,
            "BlockSpec: shift fraction must satisfy 0 <= 2f <= 1");
    require(!dsa || dsa->position != DsaPosition::kIII,
            "BlockSpec: position III does not exist in a two-conv block");
  }
  if (dsa) {
    require(dsa->config.channels == width_at(dsa->position),
            "BlockSpec: dsa config channels " +
                std::to_string(dsa->config.channels) +
                " do not match insertion width " +
                std::to_string(width_at(dsa->position)));
  }
}

std::size_t BlockSpec::width_at(DsaPosition position) const {
  if (kind == BlockKind::kTsmBasic) return channels;
  switch (position) {
    case DsaPosition::kI:
    case DsaPosition::kIV:
      return channels;
    case DsaPosition::kII:
    case DsaPosition::kIII:
      return mid_channels;
  }
  return channels;
}

void ToyNetSpec::validate() const {
  require(in_channels >= 1 && stem_channels >= 1 && classes >= 2,
          "ToyNetSpec: bad widths or class count");
  for (const BlockSpec& b : blocks) {
    b.validate();
    require(b.channels == stem_channels,
            "ToyNetSpec: identity shortcuts require every block width to "
            "equal the stem width");
  }
}

namespace {

ConvBnParams init_conv_bn(Shape weight_shape, std::size_t out_channels,
                          Rng& rng) {
  std::size_t fan_in = 1;
  for (std::size_t a = 1; a < weight_shape.size(); ++a) {
    fan_in *= weight_shape[a];
  }
  ConvBnParams p;
  p.w = Tensor::zeros(weight_shape);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (std::size_t i = 0; i < p.w.size(); ++i) p.w[i] = rng.normal(0.0, std);
  p.gamma = Tensor::ones({out_channels});
  p.beta = Tensor::zeros({out_channels});
  p.bn = BatchNormState::init(out_channels);
  return p;
}

}  // namespace

ToyNetParams ToyNetParams::init(const ToyNetSpec& spec, Rng& rng) {
  spec.validate();
  ToyNetParams p;
  p.stem = init_conv_bn({spec.stem_channels, spec.in_channels, 1, 1},
                        spec.stem_channels, rng);
  for (const BlockSpec& b : spec.blocks) {
    BlockParams bp;
    const std::size_t k = b.spatial_kernel;
    if (b.kind == BlockKind::kI3dBottleneck) {
      if (b.temporal_first_conv) {
        bp.conv_a = init_conv_bn({b.mid_channels, b.channels, 3},
                                 b.mid_channels, rng);
      } else {
        bp.conv_a = init_conv_bn({b.mid_channels, b.channels, 1, 1},
                                 b.mid_channels, rng);
      }
      bp.conv_b = init_conv_bn({b.mid_channels, b.mid_channels, k, k},
                               b.mid_channels, rng);
      bp.conv_c = init_conv_bn({b.channels, b.mid_channels, 1, 1}, b.channels,
                               rng);
    } else {
      bp.conv_a = init_conv_bn({b.channels, b.channels, k, k}, b.channels, rng);
      bp.conv_b = init_conv_bn({b.channels, b.channels, k, k}, b.channels, rng);
    }
    if (b.dsa) {
      bp.dsa = DsaParams::init(b.dsa->config, rng);
    }
    p.blocks.push_back(std::move(bp));
  }
  const std::size_t features = spec.stem_channels;
  p.fc_w = Tensor::zeros({features, spec.classes});
  const double std = std::sqrt(1.0 / static_cast<double>(features));
  for (std::size_t i = 0; i < p.fc_w.size(); ++i) {
    p.fc_w[i] = rng.normal(0.0, std);
  }
  p.fc_b = Tensor::zeros({spec.classes});
  return p;
}

void for_each_param(const ToyNetSpec& spec, ToyNetParams& params,
                    const std::function<void(const std::string&, Tensor&)>& fn) {
  auto conv_bn = [&](const std::string& prefix, ConvBnParams& p) {
    fn(prefix + ".w", p.w);
    fn(prefix + ".gamma", p.gamma);
    fn(prefix + ".beta", p.beta);
  };
  conv_bn("stem", params.stem);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string base = "block" + std::to_string(i);
    BlockParams& bp = params.blocks[i];
    conv_bn(base + ".conv_a", bp.conv_a);
    conv_bn(base + ".conv_b", bp.conv_b);
    if (spec.blocks[i].kind == BlockKind::kI3dBottleneck) {
      conv_bn(base + ".conv_c", bp.conv_c);
    }
    if (spec.blocks[i].dsa) {
      fn(base + ".dsa.w1", bp.dsa.w1);
      fn(base + ".dsa.b1", bp.dsa.b1);
      fn(base + ".dsa.gamma", bp.dsa.gamma);
      fn(base + ".dsa.beta", bp.dsa.beta);
      fn(base + ".dsa.w2", bp.dsa.w2);
      fn(base + ".dsa.b2", bp.dsa.b2);
    }
  }
  fn("fc.w", params.fc_w);
  fn("fc.b", params.fc_b);
}

ToyNetVars make_toynet_leaves(GradTape& tape, const ToyNetSpec& spec,
                              const ToyNetParams& params) {
  auto conv_bn = [&](const std::string& prefix, const ConvBnParams& p) {
    ConvBnVars v;
    v.w = tape.leaf(p.w, prefix + ".w");
    v.gamma = tape.leaf(p.gamma, prefix + ".gamma");
    v.beta = tape.leaf(p.beta, prefix + ".beta");
    return v;
  };
  ToyNetVars v;
  v.stem = conv_bn("stem", params.stem);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    const std::string base = "block" + std::to_string(i);
    BlockVars bv;
    bv.conv_a = conv_bn(base + ".conv_a", params.blocks[i].conv_a);
    bv.conv_b = conv_bn(base + ".conv_b", params.blocks[i].conv_b);
    if (spec.blocks[i].kind == BlockKind::kI3dBottleneck) {
      bv.conv_c = conv_bn(base + ".conv_c", params.blocks[i].conv_c);
    }
    if (spec.blocks[i].dsa) {
      bv.dsa = make_dsa_leaves(tape, params.blocks[i].dsa);
    }
    v.blocks.push_back(bv);
  }
  v.fc_w = tape.leaf(params.fc_w, "fc.w");
  v.fc_b = tape.leaf(params.fc_b, "fc.b");
  return v;
}

std::vector<Var> collect_leaves(const ToyNetSpec& spec, const ToyNetVars& vars) {
  std::vector<Var> leaves;
  auto push_cb = [&](const ConvBnVars& v) {
    leaves.push_back(v.w);
    leaves.push_back(v.gamma);
    leaves.push_back(v.beta);
  };
  push_cb(vars.stem);
  for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
    push_cb(vars.blocks[b].conv_a);
    push_cb(vars.blocks[b].conv_b);
    if (spec.blocks[b].kind == BlockKind::kI3dBottleneck) {
      push_cb(vars.blocks[b].conv_c);
    }
    if (spec.blocks[b].dsa) {
      const DsaParamVars& d = vars.blocks[b].dsa;
      leaves.insert(leaves.end(), {d.w1, d.b1, d.gamma, d.beta, d.w2, d.b2});
    }
  }
  leaves.push_back(vars.fc_w);
  leaves.push_back(vars.fc_b);
  return leaves;
}

Var temporal_shift(GradTape& tape, Var x, double fraction) {
  return tape.temporal_shift(x, fraction);
}

namespace {

Var conv_bn_relu(GradTape& tape, Var x, const ConvBnVars& vars,
                 ConvBnParams& params, Mode mode, bool temporal,
                 bool with_relu) {
  Var y = temporal
              ? tape.conv_temporal(x, vars.w, 1, 1)
              : tape.conv_spatial(x, vars.w, 1,
                                  tape.value(vars.w).extent(2) / 2);
  y = tape.batch_norm(y, vars.gamma, vars.beta, kAxisC, params.bn, mode);
  return with_relu ? tape.relu(y) : y;
}

Var maybe_dsa(GradTape& tape, Var x, const BlockSpec& spec,
              const BlockVars& vars, BlockParams& params, DsaPosition here,
              Mode mode) {
  if (!spec.dsa || spec.dsa->position != here) return x;
  return dsa_forward(tape, x, vars.dsa, params.dsa, spec.dsa->config, mode);
}

}  // namespace

Var run_block(GradTape& tape, Var x, const BlockSpec& spec,
              const BlockVars& vars, BlockParams& params, Mode mode) {
  spec.validate();
  require(tape.value(x).extent(kAxisC) == spec.channels,
          "run_block: input has C=" +
              std::to_string(tape.value(x).extent(kAxisC)) +
              ", spec expects C=" + std::to_string(spec.channels));

  Var shortcut = x;
  Var h = x;
  if (spec.kind == BlockKind::kTsmBasic) {
    h = temporal_shift(tape, h, spec.shift_fraction);
    h = maybe_dsa(tape, h, spec, vars, params, DsaPosition::kI, mode);
    h = conv_bn_relu(tape, h, vars.conv_a, params.conv_a, mode,
                     /*temporal=*/false, /*with_relu=*/true);
    h = maybe_dsa(tape, h, spec, vars, params, DsaPosition::kII, mode);
    h = conv_bn_relu(tape, h, vars.conv_b, params.conv_b, mode,
                     /*temporal=*/false, /*with_relu=*/false);
    h = maybe_dsa(tape, h, spec, vars, params, DsaPosition::kIV, mode);
  } else {
    h = maybe_dsa(tape, h, spec, vars, params, DsaPosition::kI, mode);
    h = conv_bn_relu(tape, h, vars.conv_a, params.conv_a, mode,
                     spec.temporal_first_conv, /*with_relu=*/true);
    h = maybe_dsa(tape, h, spec, vars, params, DsaPosition::kII, mode);
    h = conv_bn_relu(tape, h, vars.conv_b, params.conv_b, mode,
                     /*temporal=*/false, /*with_relu=*/true);
    h = maybe_dsa(tape, h, spec, vars, params, DsaPosition::kIII, mode);
    h = conv_bn_relu(tape, h, vars.conv_c, params.conv_c, mode,
                     /*temporal=*/false, /*with_relu=*/false);
    h = maybe_dsa(tape, h, spec, vars, params, DsaPosition::kIV, mode);
  }
  return tape.relu(tape.add(h, shortcut));
}

Var snippet_logits(GradTape& tape, Var x, const ToyNetSpec& spec,
                   const ToyNetVars& vars, ToyNetParams& params, Mode mode) {
  spec.validate();
  const Tensor& in = tape.value(x);
  require(in.rank() == 6, "snippet_logits: input must be (N,C,U,T,H,W)");
  require(in.extent(kAxisC) == spec.in_channels,
          "snippet_logits: input C mismatch");

  Var h = tape.conv_spatial(x, vars.stem.w, 1, 0);
  h = tape.batch_norm(h, vars.stem.gamma, vars.stem.beta, kAxisC,
                      params.stem.bn, mode);
  h = tape.relu(h);
  for (std::size_t i = 0; i < spec.blocks.size(); ++i) {
    h = run_block(tape, h, spec.blocks[i], vars.blocks[i], params.blocks[i],
                  mode);
  }
  // (N, C, U) -> (N, U, C) -> (N*U, C): the classifier is shared by snippets
  Var pooled = tape.global_avg_pool(h, {kAxisT, kAxisH, kAxisW});
  Var by_snippet = tape.permute(pooled, {0, 2, 1});
  const std::size_t n = in.extent(kAxisN), u = in.extent(kAxisU);
  Var flat = tape.reshape(by_snippet, {n * u, spec.stem_channels});
  Var logits = tape.affine(flat, vars.fc_w, vars.fc_b);
  return tape.reshape(logits, {n, u, spec.classes});
}

Var consensus(GradTape& tape, Var logits) {
  require(tape.value(logits).rank() == 3,
          "consensus: logits must be (N, U, classes)");
  return tape.global_avg_pool(logits, {1});
}

Tensor consensus(const Tensor& logits) {
  require(logits.rank() == 3, "consensus: logits must be (N, U, classes)");
  const std::size_t axes[] = {1};
  return ops::global_avg_pool(logits, axes);
}

Tensor forward_consensus(const ToyNetSpec& spec, ToyNetParams& params,
                         const Tensor& inputs, Mode mode) {
  GradTape tape;
  Var x = tape.leaf(inputs, "inputs");
  ToyNetVars vars = make_toynet_leaves(tape, spec, params);
  Var out = consensus(tape, snippet_logits(tape, x, spec, vars, params, mode));
  return tape.value(out);
}

Tensor permute_snippets(const Tensor& x, std::span<const std::size_t> perm) {
  require(x.rank() == 6, "permute_snippets: input must be (N,C,U,T,H,W)");
  const std::size_t u_ext = x.extent(kAxisU);
  require(perm.size() == u_ext, "permute_snippets: permutation length " +
                                    std::to_string(perm.size()) + " vs U=" +
                                    std::to_string(u_ext));
  Tensor out = Tensor::zeros(x.shape());
  const std::size_t outer = x.extent(kAxisN) * x.extent(kAxisC);
  const std::size_t inner =
      x.extent(kAxisT) * x.extent(kAxisH) * x.extent(kAxisW);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t u = 0; u < u_ext; ++u) {
      const std::size_t dst = (o * u_ext + u) * inner;
      const std::size_t src = (o * u_ext + perm[u]) * inner;
      for (std::size_t i = 0; i < inner; ++i) out[dst + i] = x[src + i];
    }
  }
  return out;
}

OrderDataset make_order_dataset(std::size_t n, std::uint64_t seed) {
  require(n >= 2 && n % 2 == 0, "make_order_dataset: n must be even, got " +
                                    std::to_string(n));
  const std::size_t channels = 4, snippets = 4, frames = 2, height = 4,
                    width = 4;
  OrderDataset ds;
  ds.inputs = Tensor::zeros({n, channels, snippets, frames, height, width});
  ds.labels.resize(n);

  for (std::size_t s = 0; s < n; ++s) {
    Rng rng(derive_seed(seed, s));
    // even samples increasing (label 1), odd samples a random other order
    std::vector<std::size_t> order{0, 1, 2, 3};
    if (s % 2 == 0) {
      ds.labels[s] = 1;
    } else {
      ds.labels[s] = 0;
      do {
        for (std::size_t i = snippets; i-- > 1;) {
          std::swap(order[i], order[rng.index(i + 1)]);
        }
      } while (std::is_sorted(order.begin(), order.end()));
    }

    const std::size_t blob_channel = rng.index(channels);
    const double cy = rng.uniform(0.5, static_cast<double>(height) - 1.5);
    const double cx = rng.uniform(0.5, static_cast<double>(width) - 1.5);
    const double sigma = 0.8;

    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t u = 0; u < snippets; ++u) {
        const double amplitude = static_cast<double>(order[u] + 1);
        for (std::size_t t = 0; t < frames; ++t)
          for (std::size_t h = 0; h < height; ++h)
            for (std::size_t w = 0; w < width; ++w) {
              double v = rng.normal(0.0, 0.1);
              if (c == blob_channel) {
                const double dy = static_cast<double>(h) - cy;
                const double dx = static_cast<double>(w) - cx;
                v += amplitude *
                     std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
              }
              ds.inputs(s, c, u, t, h, w) = v;
            }
      }
  }
  return ds;
}

namespace {

Tensor gather_batch(const Tensor& inputs, std::span<const std::size_t> idx) {
  Shape shape = inputs.shape();
  const std::size_t stride = inputs.size() / shape[0];
  shape[0] = idx.size();
  Tensor out = Tensor::zeros(shape);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::size_t src = idx[i] * stride;
    for (std::size_t j = 0; j < stride; ++j) out[i * stride + j] = inputs[src + j];
  }
  return out;
}

std::size_t argmax_row(const Tensor& t, std::size_t row) {
  const std::size_t k = t.extent(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j) {
    if (t[row * k + j] > t[row * k + best]) best = j;
  }
  return best;
}

}  // namespace

double evaluate_accuracy(const ToyNetSpec& spec, ToyNetParams& params,
                         const Tensor& inputs, std::span<const int> labels,
                         Mode mode) {
  const std::size_t n = inputs.extent(0);
  require(labels.size() == n, "evaluate_accuracy: label count mismatch");
  const std::size_t chunk = 64;
  std::size_t correct = 0;
  for (std::size_t lo = 0; lo < n; lo += chunk) {
    const std::size_t hi = std::min(n, lo + chunk);
    std::vector<std::size_t> idx(hi - lo);
    std::iota(idx.begin(), idx.end(), lo);
    Tensor batch = gather_batch(inputs, idx);
    Tensor logits = forward_consensus(spec, params, batch, mode);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (argmax_row(logits, i) == static_cast<std::size_t>(labels[lo + i])) {
        ++correct;
      }
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train_toy(const ToyNetSpec& spec, ToyNetParams& params,
                      const OrderDataset& dataset, std::size_t epochs,
                      double lr, std::uint64_t seed, std::size_t batch_size) {
  spec.validate();
  const std::size_t n = dataset.inputs.extent(0);
  require(dataset.labels.size() == n, "train_toy: label count mismatch");
  require(batch_size >= 2, "train_toy: batch size must be >= 2");
  const std::size_t train_n = n / 2;
  require(train_n >= batch_size, "train_toy: dataset too small for batch size");

  std::vector<Tensor*> slots;
  for_each_param(spec, params,
                 [&](const std::string&, Tensor& t) { slots.push_back(&t); });

  TrainResult result;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(seed, 0x10000 + epoch));
    std::vector<std::size_t> order(train_n);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = train_n; i-- > 1;) {
      std::swap(order[i], order[shuffle_rng.index(i + 1)]);
    }

    double loss_sum = 0.0;
    std::size_t batches = 0, correct = 0, seen = 0;
    for (std::size_t lo = 0; lo + batch_size <= train_n; lo += batch_size) {
      std::span<const std::size_t> idx(order.data() + lo, batch_size);
      Tensor batch = gather_batch(dataset.inputs, idx);
      std::vector<int> labels(batch_size);
      for (std::size_t i = 0; i < batch_size; ++i) {
        labels[i] = dataset.labels[idx[i]];
      }

      GradTape tape;
      Var x = tape.leaf(batch, "batch");
      ToyNetVars vars = make_toynet_leaves(tape, spec, params);
      Var logits =
          consensus(tape, snippet_logits(tape, x, spec, vars, params, Mode::kTrain));
      Var loss = tape.cross_entropy_mean(logits, labels);
      const double loss_value = tape.value(loss)[0];
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error(
            "train_toy: diverged (non-finite loss) at epoch " +
            std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      tape.backward(loss);

      const Tensor& logit_values = tape.value(logits);
      for (std::size_t i = 0; i < batch_size; ++i) {
        if (argmax_row(logit_values, i) ==
            static_cast<std::size_t>(labels[i])) {
          ++correct;
        }
      }
      seen += batch_size;

      // match leaves to parameter tensors in traversal order
      std::vector<Var> leaves = collect_leaves(spec, vars);
      require(leaves.size() == slots.size(),
              "train_toy: parameter traversal mismatch");

      for (std::size_t p = 0; p < slots.size(); ++p) {
        if (!tape.has_grad(leaves[p])) continue;
        Tensor g = tape.grad(leaves[p]);
        Tensor& dst = *slots[p];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= lr * g[i];
      }

      loss_sum += loss_value;
      ++batches;
    }
    result.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    result.epoch_train_accuracy.push_back(static_cast<double>(correct) /
                                          static_cast<double>(seen));
  }

  std::vector<std::size_t> train_idx(train_n), hold_idx(n - train_n);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(hold_idx.begin(), hold_idx.end(), train_n);
  Tensor train_inputs = gather_batch(dataset.inputs, train_idx);
  Tensor hold_inputs = gather_batch(dataset.inputs, hold_idx);
  std::vector<int> train_labels(dataset.labels.begin(),
                                dataset.labels.begin() + train_n);
  std::vector<int> hold_labels(dataset.labels.begin() + train_n,
                               dataset.labels.end());
  result.train_accuracy =
      evaluate_accuracy(spec, params, train_inputs, train_labels, Mode::kEval);
  result.holdout_accuracy =
      evaluate_accuracy(spec, params, hold_inputs, hold_labels, Mode::kEval);
  return result;
}

ToyNetSpec make_demo_spec(std::size_t blocks, std::size_t width, double beta) {
  ToyNetSpec spec;
  spec.in_channels = 4;
  spec.stem_channels = width;
  spec.classes = 2;
  for (std::size_t i = 0; i < blocks; ++i) {
    BlockSpec b;
    b.kind = BlockKind::kTsmBasic;
    b.channels = width;
    b.spatial_kernel = 1;
    DsaPlacement placement;
    placement.position = DsaPosition::kII;
    placement.config.channels = width;
    placement.config.dynamic_fraction = beta;
    b.dsa = placement;
    spec.blocks.push_back(b);
  }
  return spec;
}

}  // namespace dsanet
