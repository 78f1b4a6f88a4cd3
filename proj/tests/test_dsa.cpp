#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <filesystem>

#include "dsanet/dsa.hpp"
#include "dsanet/ops.hpp"
#include "dsanet/rng.hpp"

using namespace dsanet;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

DsaParams random_params(const DsaConfig& cfg, Rng& rng) {
  DsaParams p = DsaParams::init(cfg, rng);
  for (std::size_t i = 0; i < p.w2.size(); ++i) p.w2[i] = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < p.b2.size(); ++i) p.b2[i] = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < p.b1.size(); ++i) p.b1[i] = rng.uniform(-1, 1);
  return p;
}

// positional permutation of the T/H/W axes
Tensor permute_positions(const Tensor& x, std::span<const std::size_t> pt,
                         std::span<const std::size_t> ph,
                         std::span<const std::size_t> pw) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& s = x.shape();
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t u = 0; u < s[2]; ++u)
        for (std::size_t t = 0; t < s[3]; ++t)
          for (std::size_t h = 0; h < s[4]; ++h)
            for (std::size_t w = 0; w < s[5]; ++w)
              out(n, c, u, t, h, w) = x(n, c, u, pt[t], ph[h], pw[w]);
  return out;
}

}  // namespace

TEST_CASE("config rounding uses ties-to-even") {
  DsaConfig cfg;
  cfg.channels = 4;
  cfg.dynamic_fraction = 0.125;  // 0.5 channels -> rounds to 0
  CHECK(cfg.split_count() == 0);
  cfg.channels = 12;  // 1.5 -> 2
  CHECK(cfg.split_count() == 2);
  cfg.channels = 8;  // 1.0
  CHECK(cfg.split_count() == 1);
  cfg.dynamic_fraction = 0.5;
  cfg.channels = 5;  // 2.5 -> 2
  CHECK(cfg.split_count() == 2);

  cfg.kernel_size = 2;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("parameter count formula") {
  DsaConfig cfg;
  cfg.channels = 64;
  cfg.snippets = 4;
  cfg.kernel_size = 3;
  cfg.width_factor = 2;
  CHECK(dsa_param_count(cfg) == 83);

  cfg.width_factor = 1;
  CHECK(dsa_param_count(cfg) == 43);

  cfg.width_factor = 2;
  const double ratio =
      static_cast<double>(dsa_param_count(cfg)) / static_cast<double>(43);
  CHECK(ratio > 1.8);
  CHECK(ratio < 2.2);

  Rng rng(1);
  DsaParams p = DsaParams::init(cfg, rng);
  std::size_t scalars = p.w1.size() + p.b1.size() + p.gamma.size() +
                        p.beta.size() + p.w2.size() + p.b2.size();
  CHECK(scalars == dsa_param_count(cfg));
}

TEST_CASE("pool_context") {
  SUBCASE("constant input pools to the constant") {
    Tensor v = Tensor::full({1, 2, 3, 2, 2, 2}, 3.0);
    Tensor ctx = pool_context(v);
    CHECK(ctx.shape() == Shape{1, 2, 3});
    for (std::size_t i = 0; i < ctx.size(); ++i) CHECK(ctx[i] == 3.0);
  }

  SUBCASE("shape contract") {
    Tensor v = Tensor::zeros({1, 2, 4, 2, 3, 3});
    CHECK(pool_context(v).shape() == Shape{1, 2, 4});
  }

  SUBCASE("per-snippet means") {
    Tensor v = Tensor::zeros({1, 1, 4, 2, 2, 2});
    for (std::size_t u = 0; u < 4; ++u)
      for (std::size_t i = 0; i < 8; ++i)
        v(0, 0, u, i / 4, (i / 2) % 2, i % 2) = static_cast<double>(u);
    Tensor ctx = pool_context(v);
    for (std::size_t u = 0; u < 4; ++u)
      CHECK(ctx(0, 0, u) == static_cast<double>(u));
  }
}

TEST_CASE("generate_kernel") {
  SUBCASE("zero parameters give the uniform kernel") {
    DsaConfig cfg;
    cfg.channels = 3;
    cfg.snippets = 4;
    Rng rng(2);
    DsaParams p = DsaParams::init(cfg, rng);
    for (std::size_t i = 0; i < p.w1.size(); ++i) p.w1[i] = 0.0;
    Tensor ctx = random_tensor({2, 3, 4}, rng);
    DynamicKernel k = generate_kernel(ctx, p, cfg, Mode::kEval);
    CHECK(k.values.shape() == Shape{2, 3, 3});
    for (std::size_t i = 0; i < k.values.size(); ++i) {
      CHECK(k.values[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
  }

  SUBCASE("rows are normalized and strictly positive for any parameters") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      DsaConfig cfg;
      cfg.channels = 2 + trial % 3;
      cfg.snippets = 4;
      DsaParams p = random_params(cfg, rng);
      Tensor ctx = random_tensor({2, cfg.channels, 4}, rng, -3.0, 3.0);
      DynamicKernel k =
          generate_kernel(ctx, p, cfg, trial % 2 ? Mode::kTrain : Mode::kEval);
      const std::size_t rows = 2 * cfg.channels;
      for (std::size_t r = 0; r < rows; ++r) {
        double sum = 0.0;
        for (std::size_t l = 0; l < 3; ++l) {
          const double v = k.values[r * 3 + l];
          CHECK(v > 0.0);
          sum += v;
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
    }
  }

  SUBCASE("hand-evaluated scalar forward pass") {
    DsaConfig cfg;
    cfg.channels = 1;
    cfg.snippets = 2;
    cfg.kernel_size = 3;
    cfg.width_factor = 1;
    Rng rng(4);
    DsaParams p = DsaParams::init(cfg, rng);
    p.w1 = Tensor::from_data({2, 2}, {0.5, -1.0, 0.25, 0.75});
    p.b1 = Tensor::from_data({2}, {0.1, -0.05});
    p.gamma = Tensor::from_data({2}, {1.2, 0.8});
    p.beta = Tensor::from_data({2}, {0.05, -0.1});
    p.bn.running_mean = Tensor::from_data({2}, {0.1, -0.2});
    p.bn.running_var = Tensor::from_data({2}, {0.9, 1.2});
    p.w2 = Tensor::from_data({2, 3}, {0.3, -0.2, 0.6, -0.4, 0.5, 0.15});
    p.b2 = Tensor::from_data({3}, {0.02, -0.3, 0.1});

    Tensor ctx = Tensor::from_data({1, 1, 2}, {0.3, -0.2});
    DynamicKernel k = generate_kernel(ctx, p, cfg, Mode::kEval);

    // independent scalar evaluation of the same pipeline
    const double h0 = 0.3 * 0.5 + (-0.2) * 0.25 + 0.1;
    const double h1 = 0.3 * (-1.0) + (-0.2) * 0.75 + (-0.05);
    const double n0 = 1.2 * (h0 - 0.1) / std::sqrt(0.9 + 1e-5) + 0.05;
    const double n1 = 0.8 * (h1 + 0.2) / std::sqrt(1.2 + 1e-5) - 0.1;
    const double a0 = n0 > 0 ? n0 : 0.0;
    const double a1 = n1 > 0 ? n1 : 0.0;
    double logits[3] = {a0 * 0.3 + a1 * (-0.4) + 0.02,
                        a0 * (-0.2) + a1 * 0.5 - 0.3,
                        a0 * 0.6 + a1 * 0.15 + 0.1};
    double mx = std::max({logits[0], logits[1], logits[2]});
    double denom = 0.0;
    for (double& l : logits) {
      l = std::exp(l - mx);
      denom += l;
    }
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(std::abs(k.values[i] - logits[i] / denom) < 1e-10);
    }
  }

  SUBCASE("parameter shapes are validated against the config") {
    DsaConfig cfg;
    cfg.channels = 2;
    cfg.snippets = 4;
    Rng rng(5);
    DsaParams p = DsaParams::init(cfg, rng);
    cfg.width_factor = 4;  // params were built for alpha=2
    Tensor ctx = random_tensor({1, 2, 4}, rng);
    CHECK_THROWS_AS(generate_kernel(ctx, p, cfg, Mode::kEval),
                    std::invalid_argument);
  }
}

TEST_CASE("segment_conv") {
  SUBCASE("centered delta kernel is the identity") {
    Rng rng(6);
    Tensor v = random_tensor({2, 3, 4, 2, 2, 2}, rng);
    DynamicKernel k{Tensor::zeros({2, 3, 3})};
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c) k.values(n, c, 1) = 1.0;
    CHECK(segment_conv(v, k).bit_equal(v));
  }

  SUBCASE("zero-padded moving average") {
    Tensor v = Tensor::zeros({1, 1, 4, 1, 1, 1});
    for (std::size_t u = 0; u < 4; ++u)
      v(0, 0, u, 0, 0, 0) = static_cast<double>(u + 1);
    DynamicKernel k{Tensor::full({1, 1, 3}, 1.0 / 3)};
    Tensor y = segment_conv(v, k);
    CHECK(y(0, 0, 0, 0, 0, 0) == doctest::Approx(1.0));
    CHECK(y(0, 0, 1, 0, 0, 0) == doctest::Approx(2.0));
    CHECK(y(0, 0, 2, 0, 0, 0) == doctest::Approx(3.0));
    CHECK(y(0, 0, 3, 0, 0, 0) == doctest::Approx(7.0 / 3));
  }

  SUBCASE("interior outputs of a U-constant input keep the constant") {
    Rng rng(7);
    DsaConfig cfg;
    cfg.channels = 2;
    cfg.snippets = 5;
    DsaParams p = random_params(cfg, rng);
    Tensor v = Tensor::zeros({1, 2, 5, 1, 2, 2});
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t u = 0; u < 5; ++u)
        for (std::size_t i = 0; i < 4; ++i)
          v(0, c, u, 0, i / 2, i % 2) = 1.5 - static_cast<double>(c);
    Tensor ctx = pool_context(v);
    DynamicKernel k = generate_kernel(ctx, p, cfg, Mode::kEval);
    Tensor y = segment_conv(v, k);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t u = 1; u < 4; ++u)  // interior for L=3
        for (std::size_t i = 0; i < 4; ++i)
          CHECK(std::abs(y(0, c, u, 0, i / 2, i % 2) -
                         (1.5 - static_cast<double>(c))) < 1e-12);
  }

  SUBCASE("even kernels are rejected") {
    Tensor v = Tensor::zeros({1, 1, 4, 1, 1, 1});
    DynamicKernel k{Tensor::full({1, 1, 2}, 0.5)};
    CHECK_THROWS_AS(segment_conv(v, k), std::invalid_argument);
  }
}

TEST_CASE("dsa_forward") {
  Rng rng(8);

  SUBCASE("beta 0 is a bitwise identity") {
    DsaConfig cfg;
    cfg.channels = 6;
    cfg.snippets = 4;
    cfg.dynamic_fraction = 0.0;
    DsaParams p = random_params(cfg, rng);
    Tensor v = random_tensor({2, 6, 4, 2, 2, 2}, rng);
    CHECK(dsa_forward(v, p, cfg, Mode::kEval).bit_equal(v));
    CHECK(dsa_forward(v, p, cfg, Mode::kTrain).bit_equal(v));
  }

  SUBCASE("beta 1 with zero parameters is the uniform moving average") {
    DsaConfig cfg;
    cfg.channels = 2;
    cfg.snippets = 4;
    cfg.dynamic_fraction = 1.0;
    DsaParams p = DsaParams::init(cfg, rng);
    for (std::size_t i = 0; i < p.w1.size(); ++i) p.w1[i] = 0.0;
    Tensor v = Tensor::zeros({1, 2, 4, 1, 1, 1});
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t u = 0; u < 4; ++u)
        v(0, c, u, 0, 0, 0) = static_cast<double>(u + 1);
    Tensor y = dsa_forward(v, p, cfg, Mode::kEval);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(y(0, c, 0, 0, 0, 0) == doctest::Approx(1.0));
      CHECK(y(0, c, 1, 0, 0, 0) == doctest::Approx(2.0));
      CHECK(y(0, c, 2, 0, 0, 0) == doctest::Approx(3.0));
      CHECK(y(0, c, 3, 0, 0, 0) == doctest::Approx(7.0 / 3));
    }
  }

  SUBCASE("beta 1/2 on C=4: split ordering contract") {
    DsaConfig cfg;
    cfg.channels = 4;
    cfg.snippets = 4;
    cfg.dynamic_fraction = 0.5;
    DsaParams p = random_params(cfg, rng);
    Tensor v = random_tensor({2, 4, 4, 1, 2, 2}, rng);
    DsaParams p_for_manual = p;
    Tensor y = dsa_forward(v, p, cfg, Mode::kEval);

    // channels 2,3 pass through bitwise
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 2; c < 4; ++c)
        for (std::size_t u = 0; u < 4; ++u)
          for (std::size_t i = 0; i < 4; ++i)
            CHECK(y(n, c, u, 0, i / 2, i % 2) == v(n, c, u, 0, i / 2, i % 2));

    // channels 0,1 equal the manual composition over the first split
    Tensor v1 = ops::slice_channels(v, 0, 2);
    DynamicKernel k =
        generate_kernel(pool_context(v1), p_for_manual, cfg, Mode::kEval);
    Tensor manual = segment_conv(v1, k);
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t u = 0; u < 4; ++u)
          for (std::size_t i = 0; i < 4; ++i)
            CHECK(y(n, c, u, 0, i / 2, i % 2) ==
                  manual(n, c, u, 0, i / 2, i % 2));
  }

  SUBCASE("permuting T,H,W positions permutes the output identically") {
    DsaConfig cfg;
    cfg.channels = 4;
    cfg.snippets = 4;
    cfg.dynamic_fraction = 0.5;
    DsaParams p = random_params(cfg, rng);
    Tensor v = random_tensor({1, 4, 4, 3, 2, 2}, rng);

    const std::size_t pt[] = {2, 0, 1};
    const std::size_t ph[] = {1, 0};
    const std::size_t pw[] = {1, 0};
    Tensor v_perm = permute_positions(v, pt, ph, pw);

    DsaParams p1 = p, p2 = p;
    Tensor y = dsa_forward(v, p1, cfg, Mode::kTrain);
    Tensor y_perm = dsa_forward(v_perm, p2, cfg, Mode::kTrain);
    CHECK(permute_positions(y, pt, ph, pw).bit_equal(y_perm));
  }

  SUBCASE("context source flag covers the full-input variant") {
    DsaConfig cfg;
    cfg.channels = 4;
    cfg.snippets = 4;
    cfg.dynamic_fraction = 0.5;
    cfg.context_from_full_input = true;
    DsaParams p = random_params(cfg, rng);
    Tensor v = random_tensor({1, 4, 4, 1, 2, 2}, rng);
    Tensor y = dsa_forward(v, p, cfg, Mode::kEval);
    CHECK(y.shape() == v.shape());
    // pass-through half still bitwise identical
    for (std::size_t c = 2; c < 4; ++c)
      for (std::size_t u = 0; u < 4; ++u)
        for (std::size_t i = 0; i < 4; ++i)
          CHECK(y(0, c, u, 0, i / 2, i % 2) == v(0, c, u, 0, i / 2, i % 2));

    // and the two context variants genuinely differ on the dynamic half
    DsaConfig cfg_v1 = cfg;
    cfg_v1.context_from_full_input = false;
    DsaParams p2 = p;
    Tensor y_v1 = dsa_forward(v, p2, cfg_v1, Mode::kEval);
    CHECK_FALSE(y.bit_equal(y_v1));
  }
}

TEST_CASE("dsa_flops") {
  DsaConfig cfg;
  cfg.channels = 64;
  cfg.snippets = 4;
  cfg.kernel_size = 3;
  cfg.width_factor = 2;

  SUBCASE("beta 0 costs nothing") {
    cfg.dynamic_fraction = 0.0;
    CHECK(dsa_flops(cfg, {1, 64, 4, 2, 8, 8}).total() == 0);
  }

  SUBCASE("segment conv component matches the closed form") {
    cfg.dynamic_fraction = 0.125;  // 8 channels
    DsaCost cost = dsa_flops(cfg, {2, 64, 4, 2, 8, 8});
    CHECK(cost.segment_macs == 2ull * 8 * 4 * 2 * 8 * 8 * 3);
    CHECK(cost.pool_macs == 2ull * 8 * 4 * 2 * 8 * 8);
    CHECK(cost.total() ==
          cost.pool_macs + cost.mlp_macs + cost.softmax_macs +
              cost.segment_macs);
  }
}

TEST_CASE("dsa parameter bundle round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dsanet_params_test";
  fs::remove_all(dir);

  DsaConfig cfg;
  cfg.channels = 16;
  cfg.snippets = 4;
  Rng rng(11);
  DsaParams p = random_params(cfg, rng);
  p.bn.running_mean[0] = 0.25;
  p.bn.running_var[3] = 1.5;
  save_dsa_params(p, cfg, dir);

  auto [loaded, loaded_cfg] = load_dsa_params(dir);
  CHECK(loaded_cfg.channels == 16);
  CHECK(loaded_cfg.dynamic_fraction == cfg.dynamic_fraction);
  CHECK(loaded.w1.bit_equal(p.w1));
  CHECK(loaded.w2.bit_equal(p.w2));
  CHECK(loaded.bn.running_mean.bit_equal(p.bn.running_mean));
  CHECK(loaded.bn.running_var.bit_equal(p.bn.running_var));

  // identical kernels from the reloaded parameters
  Tensor ctx = random_tensor({1, cfg.split_count(), 4}, rng);
  DynamicKernel a = generate_kernel(ctx, p, cfg, Mode::kEval);
  DynamicKernel b = generate_kernel(ctx, loaded, loaded_cfg, Mode::kEval);
  CHECK(a.values.bit_equal(b.values));
  fs::remove_all(dir);
}
