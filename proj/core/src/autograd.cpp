#include "dsanet/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace dsanet {

const Tensor& Var::value() const {
  require(tape_ != nullptr, "Var: handle is not bound to a tape");
  return tape_->value(*this);
}

std::size_t GradTape::checked(Var v, const char* what) const {
  require(v.tape() == this, std::string(what) + ": Var belongs to another tape");
  require(v.id() < nodes_.size(), std::string(what) + ": stale Var");
  return v.id();
}

Var GradTape::push(std::string op, Tensor value, std::vector<Var> parents,
                   BackwardFn backward) {
  Node node;
  node.op = std::move(op);
  node.value = std::move(value);
  node.parents.reserve(parents.size());
  for (Var p : parents) node.parents.push_back(checked(p, node.op.c_str()));
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var GradTape::leaf(Tensor value, std::string name) {
  return push(std::move(name), std::move(value), {}, nullptr);
}

Var GradTape::record(std::string op, Tensor value, std::vector<Var> parents,
                     BackwardFn backward) {
  return push(std::move(op), std::move(value), std::move(parents),
              std::move(backward));
}

const Tensor& GradTape::value(Var v) const { return nodes_[checked(v, "value")].value; }

const std::string& GradTape::op_name(std::size_t node) const {
  require(node < nodes_.size(), "op_name: node out of range");
  return nodes_[node].op;
}

const Tensor& GradTape::node_value(std::size_t node) const {
  require(node < nodes_.size(), "node_value: node out of range");
  return nodes_[node].value;
}

std::vector<std::size_t> GradTape::parents(std::size_t node) const {
  require(node < nodes_.size(), "parents: node out of range");
  return nodes_[node].parents;
}

void GradTape::backward(Var scalar_output) {
  const std::size_t out = checked(scalar_output, "backward");
  require(nodes_[out].value.size() == 1,
          "backward: output must be scalar, got shape " +
              shape_str(nodes_[out].value.shape()));
  grads_.assign(nodes_.size(), Tensor{});
  grad_set_.assign(nodes_.size(), false);
  grads_[out] = Tensor::ones(nodes_[out].value.shape());
  grad_set_[out] = true;
  for (std::size_t i = out + 1; i-- > 0;) {
    if (!grad_set_[i] || !nodes_[i].backward) continue;
    nodes_[i].backward(grads_[i], *this);
  }
}

bool GradTape::has_grad(Var v) const {
  const std::size_t id = checked(v, "has_grad");
  return id < grad_set_.size() && grad_set_[id];
}

Tensor GradTape::grad(Var v) const {
  const std::size_t id = checked(v, "grad");
  if (id < grad_set_.size() && grad_set_[id]) return grads_[id];
  return Tensor::zeros(nodes_[id].value.shape());
}

void GradTape::accumulate(Var v, const Tensor& g) {
  const std::size_t id = checked(v, "accumulate");
  require(g.shape() == nodes_[id].value.shape(),
          "accumulate: gradient shape " + shape_str(g.shape()) +
              " does not match primal shape " +
              shape_str(nodes_[id].value.shape()));
  if (!grad_set_[id]) {
    grads_[id] = g;
    grad_set_[id] = true;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) grads_[id][i] += g[i];
}

Var GradTape::add(Var a, Var b) {
  Tensor y = ops::add(value(a), value(b));
  return record("add", std::move(y), {a, b},
                [a, b](const Tensor& g, GradTape& t) {
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                });
}

Var GradTape::matmul(Var a, Var b) {
  Tensor y = ops::matmul(value(a), value(b));
  return record("matmul", std::move(y), {a, b},
                [a, b](const Tensor& g, GradTape& t) {
                  t.accumulate(a, ops::matmul(g, ops::transpose2d(t.value(b))));
                  t.accumulate(b, ops::matmul(ops::transpose2d(t.value(a)), g));
                });
}

Var GradTape::relu(Var x) {
  Tensor y = ops::relu(value(x));
  return record("relu", std::move(y), {x}, [x](const Tensor& g, GradTape& t) {
    t.accumulate(x, ops::relu_vjp(t.value(x), g));
  });
}

Var GradTape::softmax(Var x, std::size_t axis) {
  Tensor y = ops::softmax(value(x), axis);
  Var out = record("softmax", std::move(y), {x}, nullptr);
  // vjp reads the forward output, so bind it after the node exists
  nodes_.back().backward = [x, out, axis](const Tensor& g, GradTape& t) {
    t.accumulate(x, ops::softmax_vjp(t.value(out), axis, g));
  };
  return out;
}

Var GradTape::global_avg_pool(Var x, std::vector<std::size_t> axes) {
  Tensor y = ops::global_avg_pool(value(x), axes);
  Shape in_shape = value(x).shape();
  return record("global_avg_pool", std::move(y), {x},
                [x, axes = std::move(axes),
                 in_shape = std::move(in_shape)](const Tensor& g, GradTape& t) {
                  t.accumulate(x, ops::global_avg_pool_vjp(in_shape, axes, g));
                });
}

Var GradTape::batch_norm(Var x, Var gamma, Var beta, std::size_t feature_axis,
                         BatchNormState& state, Mode mode) {
  if (mode == Mode::kTrain) {
    ops::BnForward f =
        ops::batch_norm_train(value(x), value(gamma), value(beta), feature_axis,
                              state);
    const double eps = state.eps;
    return record("batch_norm", std::move(f.y), {x, gamma, beta},
                  [x, gamma, beta, feature_axis, eps, mean = std::move(f.mean),
                   var = std::move(f.var)](const Tensor& g, GradTape& t) {
                    ops::BnVjp v = ops::batch_norm_train_vjp(
                        t.value(x), t.value(gamma), feature_axis, mean, var,
                        eps, g);
                    t.accumulate(x, v.gx);
                    t.accumulate(gamma, v.ggamma);
                    t.accumulate(beta, v.gbeta);
                  });
  }
  Tensor y =
      ops::batch_norm_eval(value(x), value(gamma), value(beta), feature_axis,
                           state);
  // snapshot the stats; the caller may keep training afterwards
  BatchNormState frozen = state;
  return record("batch_norm", std::move(y), {x, gamma, beta},
                [x, gamma, beta, feature_axis,
                 frozen = std::move(frozen)](const Tensor& g, GradTape& t) {
                  ops::BnVjp v = ops::batch_norm_eval_vjp(
                      t.value(x), t.value(gamma), feature_axis, frozen, g);
                  t.accumulate(x, v.gx);
                  t.accumulate(gamma, v.ggamma);
                  t.accumulate(beta, v.gbeta);
                });
}

Var GradTape::conv_spatial(Var x, Var w, std::size_t stride, std::size_t pad) {
  Tensor y = ops::conv_spatial(value(x), value(w), stride, pad);
  return record("conv_spatial", std::move(y), {x, w},
                [x, w, stride, pad](const Tensor& g, GradTape& t) {
                  ops::ConvVjp v =
                      ops::conv_spatial_vjp(t.value(x), t.value(w), stride, pad, g);
                  t.accumulate(x, v.gx);
                  t.accumulate(w, v.gw);
                });
}

Var GradTape::conv_temporal(Var x, Var w, std::size_t stride, std::size_t pad) {
  Tensor y = ops::conv_temporal(value(x), value(w), stride, pad);
  return record("conv_temporal", std::move(y), {x, w},
                [x, w, stride, pad](const Tensor& g, GradTape& t) {
                  ops::ConvVjp v =
                      ops::conv_temporal_vjp(t.value(x), t.value(w), stride, pad, g);
                  t.accumulate(x, v.gx);
                  t.accumulate(w, v.gw);
                });
}

std::pair<Var, Var> GradTape::split_channels(Var x, std::size_t count) {
  const std::size_t channels = value(x).shape()[1];
  require(count <= channels, "split_channels: count " + std::to_string(count) +
                                 " exceeds " + std::to_string(channels) +
                                 " channels");
  auto slice_node = [&](std::size_t lo, std::size_t hi) {
    Tensor y = ops::slice_channels(value(x), lo, hi);
    return record("slice_channels", std::move(y), {x},
                  [x, lo, hi](const Tensor& g, GradTape& t) {
                    const Tensor& xv = t.value(x);
                    Tensor gx = Tensor::zeros(xv.shape());
                    const std::size_t c_all = xv.shape()[1];
                    std::size_t outer = xv.shape()[0], inner = 1;
                    for (std::size_t a = 2; a < xv.rank(); ++a)
                      inner *= xv.shape()[a];
                    for (std::size_t n = 0; n < outer; ++n)
                      for (std::size_t c = lo; c < hi; ++c) {
                        const std::size_t src = (n * (hi - lo) + (c - lo)) * inner;
                        const std::size_t dst = (n * c_all + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i)
                          gx[dst + i] = g[src + i];
                      }
                    t.accumulate(x, gx);
                  });
  };
  Var first = slice_node(0, count);
  Var second = slice_node(count, channels);
  return {first, second};
}

Var GradTape::concat_channels(Var a, Var b) {
  Tensor y = ops::concat_channels(value(a), value(b));
  const std::size_t ca = value(a).shape()[1];
  return record("concat_channels", std::move(y), {a, b},
                [a, b, ca](const Tensor& g, GradTape& t) {
                  auto [ga, gb] = ops::split_channels(g, ca);
                  t.accumulate(a, ga);
                  t.accumulate(b, gb);
                });
}

Var GradTape::temporal_shift(Var x, double fraction) {
  Tensor y = ops::temporal_shift(value(x), fraction);
  return record("temporal_shift", std::move(y), {x},
                [x, fraction](const Tensor& g, GradTape& t) {
                  t.accumulate(x, ops::temporal_shift_vjp(g, fraction));
                });
}

Var GradTape::affine(Var x, Var w, Var b) {
  Tensor y = ops::affine(value(x), value(w), value(b));
  return record("affine", std::move(y), {x, w, b},
                [x, w, b](const Tensor& g, GradTape& t) {
                  t.accumulate(x, ops::matmul(g, ops::transpose2d(t.value(w))));
                  t.accumulate(w, ops::matmul(ops::transpose2d(t.value(x)), g));
                  const std::size_t rows = g.extent(0), cols = g.extent(1);
                  Tensor gb = Tensor::zeros({cols});
                  for (std::size_t i = 0; i < rows; ++i)
                    for (std::size_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
                  t.accumulate(b, gb);
                });
}

Var GradTape::permute(Var x, std::vector<std::size_t> perm) {
  Tensor y = ops::permute(value(x), perm);
  std::vector<std::size_t> inverse(perm.size());
  for (std::size_t a = 0; a < perm.size(); ++a) inverse[perm[a]] = a;
  return record("permute", std::move(y), {x},
                [x, inverse = std::move(inverse)](const Tensor& g, GradTape& t) {
                  t.accumulate(x, ops::permute(g, inverse));
                });
}

Var GradTape::reshape(Var x, Shape shape) {
  Tensor y = ops::reshape(value(x), shape);
  Shape in_shape = value(x).shape();
  return record("reshape", std::move(y), {x},
                [x, in_shape = std::move(in_shape)](const Tensor& g, GradTape& t) {
                  t.accumulate(x, ops::reshape(g, in_shape));
                });
}

Var GradTape::weighted_sum(Var x, Tensor weights) {
  require(weights.shape() == value(x).shape(),
          "weighted_sum: weight shape " + shape_str(weights.shape()) +
              " vs input " + shape_str(value(x).shape()));
  double acc = 0.0;
  const Tensor& xv = value(x);
  for (std::size_t i = 0; i < xv.size(); ++i) acc += xv[i] * weights[i];
  return record("weighted_sum", Tensor::scalar(acc), {x},
                [x, weights = std::move(weights)](const Tensor& g, GradTape& t) {
                  Tensor gx = Tensor::zeros(weights.shape());
                  for (std::size_t i = 0; i < gx.size(); ++i)
                    gx[i] = g[0] * weights[i];
                  t.accumulate(x, gx);
                });
}

Var GradTape::sum(Var x) { return weighted_sum(x, Tensor::ones(value(x).shape())); }

Var GradTape::cross_entropy_mean(Var logits, std::vector<int> labels) {
  const Tensor& z = value(logits);
  require(z.rank() == 2, "cross_entropy_mean: logits must be (N, classes)");
  const std::size_t n = z.extent(0), k = z.extent(1);
  require(labels.size() == n, "cross_entropy_mean: " + std::to_string(labels.size()) +
                                  " labels for " + std::to_string(n) + " rows");
  for (int label : labels) {
    require(label >= 0 && static_cast<std::size_t>(label) < k,
            "cross_entropy_mean: label out of range");
  }

  Tensor probs = ops::softmax(z, 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    loss -= std::log(probs[i * k + static_cast<std::size_t>(labels[i])]);
  }
  loss /= static_cast<double>(n);

  return record("cross_entropy_mean", Tensor::scalar(loss), {logits},
                [logits, labels = std::move(labels), probs = std::move(probs), n,
                 k](const Tensor& g, GradTape& t) {
                  Tensor gz = Tensor::zeros({n, k});
                  const double scale = g[0] / static_cast<double>(n);
                  for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < k; ++j) {
                      double target =
                          (j == static_cast<std::size_t>(labels[i])) ? 1.0 : 0.0;
                      gz[i * k + j] = scale * (probs[i * k + j] - target);
                    }
                  }
                  t.accumulate(logits, gz);
                });
}

}  // namespace dsanet
