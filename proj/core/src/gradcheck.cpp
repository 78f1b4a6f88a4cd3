#include "dsanet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

#include "dsanet/backbone.hpp"
#include "dsanet/dsa.hpp"
#include "dsanet/rng.hpp"

namespace dsanet {

namespace {

constexpr double kErrorFloor = 1e-2;
constexpr double kKinkMargin = 3e-4;
constexpr int kMaxResamples = 50;

Tensor rand_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                   double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// uniform in [-1,1] but resampled out of (-margin, margin)
Tensor rand_tensor_margin(const Shape& shape, Rng& rng, double margin) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = rng.uniform(-1.0, 1.0);
    while (std::abs(v) < margin) v = rng.uniform(-1.0, 1.0);
    t[i] = v;
  }
  return t;
}

std::vector<double> flatten(const std::vector<Tensor>& tensors) {
  std::vector<double> flat;
  for (const Tensor& t : tensors) {
    flat.insert(flat.end(), t.data().begin(), t.data().end());
  }
  return flat;
}

std::vector<Tensor> unflatten(std::span<const double> flat,
                              const std::vector<Shape>& shapes) {
  std::vector<Tensor> out;
  std::size_t pos = 0;
  for (const Shape& s : shapes) {
    const std::size_t n = numel(s);
    out.push_back(Tensor::from_data(
        s, std::vector<double>(flat.begin() + pos, flat.begin() + pos + n)));
    pos += n;
  }
  return out;
}

double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kErrorFloor});
}

}  // namespace

bool has_relu_near_kink(const GradTape& tape, double margin) {
  for (std::size_t i = 0; i < tape.size(); ++i) {
    if (tape.op_name(i) != "relu") continue;
    for (std::size_t p : tape.parents(i)) {
      for (double v : tape.node_value(p).data()) {
        if (std::abs(v) < margin) return true;
      }
    }
  }
  return false;
}

double finite_difference_worst_error(const FlatCaseFn& fn,
                                     std::vector<double> x0, double h) {
  CaseEval base = fn(x0, true);
  require(base.grad.size() == x0.size(),
          "gradcheck: analytic gradient has wrong length");
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double saved = x0[i];
    x0[i] = saved + h;
    const double fp = fn(x0, false).value;
    x0[i] = saved - h;
    const double fm = fn(x0, false).value;
    x0[i] = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, rel_error(base.grad[i], numeric));
  }
  return worst;
}

namespace {

// A case whose coordinates are plain input tensors fed to an op; the loss is
// a fixed random weighting of the op output.
struct TensorCase {
  std::string name;
  std::vector<Shape> shapes;
  double margin = 0.0;    // sample inputs away from zero
  bool kink_guard = false;  // redraw while a relu input sits near its kink
  std::function<Var(GradTape&, const std::vector<Var>&)> build;
};

GradCase make_case(TensorCase c) {
  GradCase out;
  out.name = c.name;
  out.trial = [c = std::move(c)](std::uint64_t trial_seed, double h) {
    Rng rng(trial_seed);
    for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
      std::vector<Tensor> inputs;
      for (const Shape& s : c.shapes) {
        inputs.push_back(c.margin > 0.0 ? rand_tensor_margin(s, rng, c.margin)
                                        : rand_tensor(s, rng));
      }
      // probe to learn the output shape and to apply the kink guard
      GradTape probe;
      std::vector<Var> probe_leaves;
      for (const Tensor& t : inputs) probe_leaves.push_back(probe.leaf(t));
      Var probe_out = c.build(probe, probe_leaves);
      if (c.kink_guard && has_relu_near_kink(probe, kKinkMargin)) continue;
      Tensor weights = rand_tensor(probe.value(probe_out).shape(), rng);

      std::vector<Shape> shapes = c.shapes;
      auto fn = [&c, &shapes, &weights](std::span<const double> flat,
                                        bool want_grad) {
        std::vector<Tensor> tensors = unflatten(flat, shapes);
        GradTape tape;
        std::vector<Var> leaves;
        for (Tensor& t : tensors) leaves.push_back(tape.leaf(std::move(t)));
        Var out_var = c.build(tape, leaves);
        Var loss = tape.weighted_sum(out_var, weights);
        CaseEval eval;
        eval.value = tape.value(loss)[0];
        if (want_grad) {
          tape.backward(loss);
          for (Var leaf : leaves) {
            Tensor g = tape.grad(leaf);
            eval.grad.insert(eval.grad.end(), g.data().begin(),
                             g.data().end());
          }
        }
        return eval;
      };
      return finite_difference_worst_error(fn, flatten(inputs), h);
    }
    throw std::runtime_error("gradcheck: could not sample a clean draw for " +
                             c.name);
  };
  return out;
}

GradCase cross_entropy_case() {
  GradCase out;
  out.name = "cross_entropy_mean";
  out.trial = [](std::uint64_t trial_seed, double h) {
    Rng rng(trial_seed);
    const Shape shape{4, 3};
    Tensor logits = rand_tensor(shape, rng);
    std::vector<int> labels{0, 2, 1, 0};
    auto fn = [&](std::span<const double> flat, bool want_grad) {
      GradTape tape;
      Var z = tape.leaf(Tensor::from_data(
          shape, std::vector<double>(flat.begin(), flat.end())));
      Var loss = tape.cross_entropy_mean(z, labels);
      CaseEval eval;
      eval.value = tape.value(loss)[0];
      if (want_grad) {
        tape.backward(loss);
        Tensor g = tape.grad(z);
        eval.grad.assign(g.data().begin(), g.data().end());
      }
      return eval;
    };
    return finite_difference_worst_error(
        fn, std::vector<double>(logits.data().begin(), logits.data().end()), h);
  };
  return out;
}

GradCase generate_kernel_case(Mode mode) {
  GradCase out;
  out.name = mode == Mode::kTrain ? "generate_kernel_train"
                                  : "generate_kernel_eval";
  out.trial = [mode](std::uint64_t trial_seed, double h) {
    Rng rng(trial_seed);
    DsaConfig cfg;
    cfg.channels = 3;
    cfg.snippets = 4;
    cfg.kernel_size = 3;
    cfg.width_factor = 2;
    cfg.dynamic_fraction = 1.0;

    const std::size_t hidden = cfg.hidden_width();
    std::vector<Shape> shapes{{2, 3, 4},        // ctx
                              {4, hidden},      // w1
                              {hidden},         // b1
                              {hidden},         // gamma
                              {hidden},         // beta
                              {hidden, 3},      // w2
                              {3}};             // b2
    BatchNormState eval_state = BatchNormState::init(hidden);
    for (std::size_t i = 0; i < hidden; ++i) {
      eval_state.running_mean[i] = rng.uniform(-0.5, 0.5);
      eval_state.running_var[i] = rng.uniform(0.5, 2.0);
    }

    for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
      std::vector<Tensor> inputs;
      for (const Shape& s : shapes) inputs.push_back(rand_tensor(s, rng));

      auto build = [&](GradTape& tape, const std::vector<Var>& leaves) {
        DsaParamVars vars{leaves[1], leaves[2], leaves[3],
                          leaves[4], leaves[5], leaves[6]};
        DsaParams host;
        host.w1 = tape.value(leaves[1]);
        host.b1 = tape.value(leaves[2]);
        host.gamma = tape.value(leaves[3]);
        host.beta = tape.value(leaves[4]);
        host.w2 = tape.value(leaves[5]);
        host.b2 = tape.value(leaves[6]);
        host.bn = mode == Mode::kTrain ? BatchNormState::init(hidden)
                                       : eval_state;
        return generate_kernel(tape, leaves[0], vars, host, cfg, mode);
      };

      GradTape probe;
      std::vector<Var> probe_leaves;
      for (const Tensor& t : inputs) probe_leaves.push_back(probe.leaf(t));
      Var probe_out = build(probe, probe_leaves);
      if (has_relu_near_kink(probe, kKinkMargin)) continue;
      Tensor weights = rand_tensor(probe.value(probe_out).shape(), rng);

      auto fn = [&](std::span<const double> flat, bool want_grad) {
        std::vector<Tensor> tensors = unflatten(flat, shapes);
        GradTape tape;
        std::vector<Var> leaves;
        for (Tensor& t : tensors) leaves.push_back(tape.leaf(std::move(t)));
        Var kernel = build(tape, leaves);
        Var loss = tape.weighted_sum(kernel, weights);
        CaseEval eval;
        eval.value = tape.value(loss)[0];
        if (want_grad) {
          tape.backward(loss);
          for (Var leaf : leaves) {
            Tensor g = tape.grad(leaf);
            eval.grad.insert(eval.grad.end(), g.data().begin(), g.data().end());
          }
        }
        return eval;
      };
      return finite_difference_worst_error(fn, flatten(inputs), h);
    }
    throw std::runtime_error("gradcheck: could not sample generate_kernel");
  };
  return out;
}

GradCase toynet_case() {
  GradCase out;
  out.name = "toynet_2block";
  out.trial = [](std::uint64_t trial_seed, double h) {
    Rng rng(trial_seed);

    ToyNetSpec spec;
    spec.in_channels = 3;
    spec.stem_channels = 8;
    spec.classes = 3;
    BlockSpec tsm;
    tsm.kind = BlockKind::kTsmBasic;
    tsm.channels = 8;
    tsm.spatial_kernel = 3;
    tsm.shift_fraction = 0.25;
    DsaPlacement tsm_dsa;
    tsm_dsa.position = DsaPosition::kII;
    tsm_dsa.config.channels = 8;
    tsm_dsa.config.snippets = 2;
    tsm_dsa.config.dynamic_fraction = 0.25;
    tsm.dsa = tsm_dsa;
    spec.blocks.push_back(tsm);
    BlockSpec i3d;
    i3d.kind = BlockKind::kI3dBottleneck;
    i3d.channels = 8;
    i3d.mid_channels = 4;
    i3d.temporal_first_conv = true;
    i3d.spatial_kernel = 3;
    DsaPlacement i3d_dsa;
    i3d_dsa.position = DsaPosition::kIII;
    i3d_dsa.config.channels = 4;
    i3d_dsa.config.snippets = 2;
    i3d_dsa.config.dynamic_fraction = 0.5;
    i3d.dsa = i3d_dsa;
    spec.blocks.push_back(i3d);

    const Shape input_shape{2, 3, 2, 2, 3, 3};
    const std::vector<int> labels{0, 2};

    for (int attempt = 0; attempt < kMaxResamples; ++attempt) {
      ToyNetParams base = ToyNetParams::init(spec, rng);
      Tensor input = rand_tensor(input_shape, rng);

      std::vector<Shape> shapes{input_shape};
      for_each_param(spec, base, [&](const std::string&, Tensor& t) {
        shapes.push_back(t.shape());
      });

      auto fn = [&](std::span<const double> flat, bool want_grad) {
        std::vector<Tensor> tensors = unflatten(flat, shapes);
        ToyNetParams params = base;  // fresh batch-norm states every call
        std::size_t slot = 1;
        for_each_param(spec, params, [&](const std::string&, Tensor& t) {
          t = tensors[slot++];
        });
        GradTape tape;
        Var x = tape.leaf(tensors[0], "input");
        ToyNetVars vars = make_toynet_leaves(tape, spec, params);
        Var logits = consensus(
            tape, snippet_logits(tape, x, spec, vars, params, Mode::kTrain));
        Var loss = tape.cross_entropy_mean(logits, labels);
        CaseEval eval;
        eval.value = tape.value(loss)[0];
        if (want_grad) {
          tape.backward(loss);
          Tensor gx = tape.grad(x);
          eval.grad.assign(gx.data().begin(), gx.data().end());
          for (Var leaf : collect_leaves(spec, vars)) {
            Tensor g = tape.grad(leaf);
            eval.grad.insert(eval.grad.end(), g.data().begin(), g.data().end());
          }
        }
        return eval;
      };

      // probe for kink proximity
      std::vector<Tensor> probe_inputs{input};
      for_each_param(spec, base, [&](const std::string&, Tensor& t) {
        probe_inputs.push_back(t);
      });
      {
        ToyNetParams params = base;
        GradTape probe;
        Var x = probe.leaf(input, "input");
        ToyNetVars vars = make_toynet_leaves(probe, spec, params);
        consensus(probe,
                  snippet_logits(probe, x, spec, vars, params, Mode::kTrain));
        if (has_relu_near_kink(probe, kKinkMargin)) continue;
      }
      return finite_difference_worst_error(fn, flatten(probe_inputs), h);
    }
    throw std::runtime_error("gradcheck: could not sample toynet_2block");
  };
  return out;
}

}  // namespace

std::vector<GradCase> standard_grad_cases() {
  std::vector<GradCase> cases;

  cases.push_back(make_case(
      {"add", {{2, 3}, {2, 3}}, 0.0, false,
       [](GradTape& t, const std::vector<Var>& v) { return t.add(v[0], v[1]); }}));

  cases.push_back(make_case({"matmul",
                             {{3, 4}, {4, 2}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.matmul(v[0], v[1]);
                             }}));

  cases.push_back(make_case({"relu",
                             {{2, 5}},
                             1e-3,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.relu(v[0]);
                             }}));

  cases.push_back(make_case({"softmax",
                             {{2, 3, 4}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.softmax(v[0], 1);
                             }}));

  cases.push_back(make_case({"global_avg_pool",
                             {{2, 3, 2, 2}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.global_avg_pool(v[0], {1, 3});
                             }}));

  cases.push_back(make_case(
      {"batch_norm_train",
       {{6, 4}, {4}, {4}},
       0.0,
       false,
       [](GradTape& t, const std::vector<Var>& v) {
         BatchNormState state = BatchNormState::init(4);
         return t.batch_norm(v[0], v[1], v[2], 1, state, Mode::kTrain);
       }}));

  cases.push_back(make_case(
      {"batch_norm_eval",
       {{6, 4}, {4}, {4}},
       0.0,
       false,
       [](GradTape& t, const std::vector<Var>& v) {
         BatchNormState state = BatchNormState::init(4);
         for (std::size_t i = 0; i < 4; ++i) {
           state.running_mean[i] = 0.1 * static_cast<double>(i) - 0.2;
           state.running_var[i] = 0.5 + 0.25 * static_cast<double>(i);
         }
         return t.batch_norm(v[0], v[1], v[2], 1, state, Mode::kEval);
       }}));

  cases.push_back(make_case({"conv_spatial",
                             {{2, 2, 2, 1, 4, 4}, {3, 2, 3, 3}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.conv_spatial(v[0], v[1], 1, 1);
                             }}));

  cases.push_back(make_case({"conv_spatial_strided",
                             {{1, 2, 1, 1, 5, 5}, {2, 2, 3, 3}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.conv_spatial(v[0], v[1], 2, 0);
                             }}));

  cases.push_back(make_case({"conv_temporal",
                             {{2, 2, 2, 4, 2, 2}, {3, 2, 3}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.conv_temporal(v[0], v[1], 1, 1);
                             }}));

  cases.push_back(make_case(
      {"split_concat",
       {{2, 5, 2, 1, 2, 2}},
       0.0,
       false,
       [](GradTape& t, const std::vector<Var>& v) {
         auto [head, tail] = t.split_channels(v[0], 2);
         return t.concat_channels(tail, head);  // swapped halves
       }}));

  cases.push_back(make_case({"temporal_shift",
                             {{2, 4, 2, 3, 2, 2}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.temporal_shift(v[0], 0.25);
                             }}));

  cases.push_back(make_case({"permute",
                             {{2, 3, 4}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.permute(v[0], {2, 0, 1});
                             }}));

  cases.push_back(make_case({"affine",
                             {{3, 4}, {4, 2}, {2}},
                             0.0,
                             false,
                             [](GradTape& t, const std::vector<Var>& v) {
                               return t.affine(v[0], v[1], v[2]);
                             }}));

  cases.push_back(make_case(
      {"segment_conv",
       {{2, 3, 4, 1, 2, 2}, {2, 3, 3}},
       0.0,
       false,
       [](GradTape& t, const std::vector<Var>& v) {
         return segment_conv(t, v[0], v[1]);
       }}));

  cases.push_back(cross_entropy_case());
  cases.push_back(generate_kernel_case(Mode::kTrain));
  cases.push_back(generate_kernel_case(Mode::kEval));

  cases.push_back(make_case(
      {"dsa_forward",
       {{2, 4, 4, 1, 2, 2}, {4, 8}, {8}, {8}, {8}, {8, 3}, {3}},
       0.0,
       true,
       [](GradTape& t, const std::vector<Var>& v) {
         DsaConfig cfg;
         cfg.channels = 4;
         cfg.snippets = 4;
         cfg.width_factor = 2;
         cfg.dynamic_fraction = 0.5;
         DsaParamVars vars{v[1], v[2], v[3], v[4], v[5], v[6]};
         DsaParams host;
         host.w1 = t.value(v[1]);
         host.b1 = t.value(v[2]);
         host.gamma = t.value(v[3]);
         host.beta = t.value(v[4]);
         host.w2 = t.value(v[5]);
         host.b2 = t.value(v[6]);
         host.bn = BatchNormState::init(cfg.hidden_width());
         return dsa_forward(t, v[0], vars, host, cfg, Mode::kTrain);
       }}));

  cases.push_back(toynet_case());
  return cases;
}

GradSuiteReport run_gradient_suite(const GradSuiteOptions& options,
                                   std::span<const GradCase> extra_cases) {
  std::vector<GradCase> cases = standard_grad_cases();
  for (const GradCase& c : extra_cases) cases.push_back(c);

  GradSuiteReport report;
  report.tolerance = options.tolerance;
  report.results.resize(cases.size());

  auto run_one = [&](std::size_t i) {
    GradCaseResult r;
    r.name = cases[i].name;
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      const std::uint64_t s =
          derive_seed(options.seed, i * 10007ull + trial);
      const double err = cases[i].trial(s, options.h);
      if (err > r.worst_rel_error) {
        r.worst_rel_error = err;
        r.worst_seed = s;
      }
    }
    report.results[i] = std::move(r);
  };

  const std::size_t jobs = std::max<std::size_t>(1, options.jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < cases.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&, w] {
        for (std::size_t i = w; i < cases.size(); i += jobs) run_one(i);
      });
    }
    for (std::thread& t : workers) t.join();
  }
  return report;
}

}  // namespace dsanet
