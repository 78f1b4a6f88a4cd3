#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "dsanet/ops.hpp"
#include "dsanet/rng.hpp"
#include "dsanet/tensor.hpp"

using namespace dsanet;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Reference matrix product, written independently of ops::matmul.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += a(i, p) * b(p, j);
  return out;
}

// Direct six-loop spatial convolution over every (n,u,t) slice; no shared
// code with the library implementation.
Tensor conv_spatial_oracle(const Tensor& x, const Tensor& w, int stride,
                           int pad) {
  const int n_ext = static_cast<int>(x.shape()[0]);
  const int cin = static_cast<int>(x.shape()[1]);
  const int u_ext = static_cast<int>(x.shape()[2]);
  const int t_ext = static_cast<int>(x.shape()[3]);
  const int h_ext = static_cast<int>(x.shape()[4]);
  const int w_ext = static_cast<int>(x.shape()[5]);
  const int cout = static_cast<int>(w.shape()[0]);
  const int kh = static_cast<int>(w.shape()[2]);
  const int kw = static_cast<int>(w.shape()[3]);
  const int oh = (h_ext + 2 * pad - kh) / stride + 1;
  const int ow = (w_ext + 2 * pad - kw) / stride + 1;

  Tensor out = Tensor::zeros({static_cast<std::size_t>(n_ext),
                              static_cast<std::size_t>(cout),
                              static_cast<std::size_t>(u_ext),
                              static_cast<std::size_t>(t_ext),
                              static_cast<std::size_t>(oh),
                              static_cast<std::size_t>(ow)});
  for (int n = 0; n < n_ext; ++n)
    for (int u = 0; u < u_ext; ++u)
      for (int t = 0; t < t_ext; ++t)
        for (int co = 0; co < cout; ++co)
          for (int y = 0; y < oh; ++y)
            for (int z = 0; z < ow; ++z) {
              double acc = 0.0;
              for (int ci = 0; ci < cin; ++ci)
                for (int a = 0; a < kh; ++a)
                  for (int b = 0; b < kw; ++b) {
                    const int iy = y * stride + a - pad;
                    const int iz = z * stride + b - pad;
                    if (iy < 0 || iy >= h_ext || iz < 0 || iz >= w_ext) continue;
                    acc += w(co, ci, a, b) * x(n, ci, u, t, iy, iz);
                  }
              out(n, co, u, t, y, z) = acc;
            }
  return out;
}

Tensor conv_temporal_oracle(const Tensor& x, const Tensor& w, int stride,
                            int pad) {
  const int n_ext = static_cast<int>(x.shape()[0]);
  const int cin = static_cast<int>(x.shape()[1]);
  const int u_ext = static_cast<int>(x.shape()[2]);
  const int t_ext = static_cast<int>(x.shape()[3]);
  const int h_ext = static_cast<int>(x.shape()[4]);
  const int w_ext = static_cast<int>(x.shape()[5]);
  const int cout = static_cast<int>(w.shape()[0]);
  const int kt = static_cast<int>(w.shape()[2]);
  const int ot = (t_ext + 2 * pad - kt) / stride + 1;

  Tensor out = Tensor::zeros({static_cast<std::size_t>(n_ext),
                              static_cast<std::size_t>(cout),
                              static_cast<std::size_t>(u_ext),
                              static_cast<std::size_t>(ot),
                              static_cast<std::size_t>(h_ext),
                              static_cast<std::size_t>(w_ext)});
  for (int n = 0; n < n_ext; ++n)
    for (int u = 0; u < u_ext; ++u)
      for (int co = 0; co < cout; ++co)
        for (int t = 0; t < ot; ++t)
          for (int y = 0; y < h_ext; ++y)
            for (int z = 0; z < w_ext; ++z) {
              double acc = 0.0;
              for (int ci = 0; ci < cin; ++ci)
                for (int a = 0; a < kt; ++a) {
                  const int it = t * stride + a - pad;
                  if (it < 0 || it >= t_ext) continue;
                  acc += w(co, ci, a) * x(n, ci, u, it, y, z);
                }
              out(n, co, u, t, y, z) = acc;
            }
  return out;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

}  // namespace

TEST_CASE("add") {
  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor b = Tensor::from_data({2}, {3, 4});
  Tensor y = ops::add(a, b);
  CHECK(y[0] == 4.0);
  CHECK(y[1] == 6.0);

  CHECK(ops::add(a, Tensor::zeros({2})).bit_equal(a));
  CHECK_THROWS_AS(ops::add(a, Tensor::zeros({3})), std::invalid_argument);
  // error message reports both shapes
  try {
    ops::add(a, Tensor::zeros({3}));
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2)") != std::string::npos);
    CHECK(msg.find("(3)") != std::string::npos);
  }
}

TEST_CASE("matmul examples and oracle") {
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(ops::matmul(id, m).bit_equal(m));

  Tensor a = Tensor::from_data({1, 2}, {1, 2});
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  CHECK(ops::matmul(a, b)[0] == 11.0);

  Rng rng(11);
  Tensor ra = random_tensor({3, 4}, rng);
  Tensor rb = random_tensor({4, 2}, rng);
  CHECK(max_abs_diff(ops::matmul(ra, rb), matmul_oracle(ra, rb)) < 1e-12);

  CHECK_THROWS_AS(ops::matmul(ra, ra), std::invalid_argument);
}

TEST_CASE("relu") {
  Tensor x = Tensor::from_data({3}, {-1, 0, 2});
  Tensor y = ops::relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);
  CHECK(ops::relu(y).bit_equal(y));

  // subgradient at exactly zero is zero
  Tensor g = ops::relu_vjp(x, Tensor::ones({3}));
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 1.0);
}

TEST_CASE("softmax") {
  Tensor flat = ops::softmax(Tensor::from_data({3}, {0, 0, 0}), 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(flat[i] == doctest::Approx(1.0 / 3));

  Tensor x = Tensor::from_data({3}, {1, 2, 3});
  Tensor y = ops::softmax(x, 0);
  CHECK(std::abs(y[0] - 0.09003057) < 1e-8);
  CHECK(std::abs(y[1] - 0.24472847) < 1e-8);
  CHECK(std::abs(y[2] - 0.66524096) < 1e-8);

  // shift invariance and row normalization
  Rng rng(5);
  Tensor r = random_tensor({4, 6}, rng, -30.0, 30.0);
  Tensor shifted = r;
  for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += 17.5;
  CHECK(max_abs_diff(ops::softmax(r, 1), ops::softmax(shifted, 1)) < 1e-12);
  Tensor s = ops::softmax(r, 1);
  for (std::size_t row = 0; row < 4; ++row) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 6; ++j) {
      sum += s(row, j);
      CHECK(s(row, j) > 0.0);
      CHECK(s(row, j) < 1.0);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(ops::softmax(x, 3), std::invalid_argument);
}

TEST_CASE("global_avg_pool") {
  Tensor c = Tensor::full({2, 3, 2}, 4.25);
  std::size_t axes_all[] = {0, 1, 2};
  Tensor pooled = ops::global_avg_pool(c, axes_all);
  CHECK(pooled.size() == 1);
  CHECK(pooled[0] == doctest::Approx(4.25));

  Tensor x = Tensor::zeros({2, 3, 2, 2, 2, 2});
  std::size_t axes_thw[] = {3, 4, 5};
  CHECK(ops::global_avg_pool(x, axes_thw).shape() == Shape{2, 3, 2});

  Tensor v = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  std::size_t axes01[] = {0, 1};
  CHECK(ops::global_avg_pool(v, axes01)[0] == doctest::Approx(2.5));

  std::size_t bad[] = {7};
  CHECK_THROWS_AS(ops::global_avg_pool(v, bad), std::invalid_argument);
}

TEST_CASE("batch_norm") {
  BatchNormState state = BatchNormState::init(2);
  Tensor gamma = Tensor::ones({2});
  Tensor beta = Tensor::zeros({2});

  SUBCASE("eval with identity statistics is nearly identity") {
    Tensor x = Tensor::from_data({3, 2}, {1, -2, 0.5, 4, -1, 0});
    Tensor y = ops::batch_norm_eval(x, gamma, beta, 1, state);
    for (std::size_t i = 0; i < x.size(); ++i) {
      CHECK(y[i] == doctest::Approx(x[i] / std::sqrt(1.0 + 1e-5)));
    }
  }

  SUBCASE("train output is standardized") {
    Rng rng(3);
    Tensor x = random_tensor({16, 2}, rng, -2.0, 5.0);
    ops::BnForward f = ops::batch_norm_train(x, gamma, beta, 1, state);
    for (std::size_t feature = 0; feature < 2; ++feature) {
      double mean = 0.0, var = 0.0;
      for (std::size_t row = 0; row < 16; ++row) mean += f.y(row, feature);
      mean /= 16.0;
      for (std::size_t row = 0; row < 16; ++row) {
        var += (f.y(row, feature) - mean) * (f.y(row, feature) - mean);
      }
      var /= 16.0;
      CHECK(std::abs(mean) < 1e-10);
      // epsilon shrinks the variance slightly below one
      CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
  }

  SUBCASE("two identical rows normalize to zero") {
    Tensor x = Tensor::from_data({2, 2}, {3.5, -1.25, 3.5, -1.25});
    ops::BnForward f = ops::batch_norm_train(x, gamma, beta, 1, state);
    for (std::size_t i = 0; i < 4; ++i) CHECK(f.y[i] == 0.0);
  }

  SUBCASE("train mode rejects a single-row batch") {
    Tensor x = Tensor::from_data({1, 2}, {1, 2});
    CHECK_THROWS_AS(ops::batch_norm_train(x, gamma, beta, 1, state),
                    std::invalid_argument);
  }
}

TEST_CASE("conv_spatial examples and oracle") {
  SUBCASE("1x1 delta kernel is identity") {
    Rng rng(4);
    Tensor x = random_tensor({1, 1, 2, 2, 3, 3}, rng);
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {1.0});
    CHECK(ops::conv_spatial(x, w, 1, 0).bit_equal(x));
  }

  SUBCASE("all-ones 3x3 on all-ones input counts overlap") {
    Tensor x = Tensor::ones({1, 1, 1, 1, 3, 3});
    Tensor w = Tensor::ones({1, 1, 3, 3});
    Tensor y = ops::conv_spatial(x, w, 1, 1);
    CHECK(y(0, 0, 0, 0, 1, 1) == 9.0);
    CHECK(y(0, 0, 0, 0, 0, 0) == 4.0);
    CHECK(y(0, 0, 0, 0, 0, 2) == 4.0);
    CHECK(y(0, 0, 0, 0, 2, 0) == 4.0);
    CHECK(y(0, 0, 0, 0, 2, 2) == 4.0);
    CHECK(y(0, 0, 0, 0, 0, 1) == 6.0);
  }

  SUBCASE("random cases match the loop oracle") {
    Rng rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_tensor({2, 3, 2, 2, 5, 4}, rng);
      Tensor w = random_tensor({2, 3, 3, 3}, rng);
      CHECK(max_abs_diff(ops::conv_spatial(x, w, 1, 1),
                         conv_spatial_oracle(x, w, 1, 1)) < 1e-12);
      CHECK(max_abs_diff(ops::conv_spatial(x, w, 2, 1),
                         conv_spatial_oracle(x, w, 2, 1)) < 1e-12);
    }
  }

  SUBCASE("kernel larger than padded input is rejected") {
    Tensor x = Tensor::ones({1, 1, 1, 1, 2, 2});
    Tensor w = Tensor::ones({1, 1, 3, 3});
    CHECK_THROWS_AS(ops::conv_spatial(x, w, 1, 0), std::invalid_argument);
  }
}

TEST_CASE("conv_temporal examples and oracle") {
  Rng rng(7);
  SUBCASE("kt=1 weight-1 kernel is identity") {
    Tensor x = random_tensor({1, 2, 2, 3, 2, 2}, rng);
    Tensor w = Tensor::zeros({2, 2, 1});
    w(0, 0, 0) = 1.0;
    w(1, 1, 0) = 1.0;
    CHECK(ops::conv_temporal(x, w, 1, 0).bit_equal(x));
  }

  SUBCASE("centered delta [0,1,0] with pad 1 is identity") {
    Tensor x = random_tensor({1, 1, 2, 4, 2, 2}, rng);
    Tensor w = Tensor::from_data({1, 1, 3}, {0, 1, 0});
    CHECK(ops::conv_temporal(x, w, 1, 1).bit_equal(x));
  }

  SUBCASE("random cases match the loop oracle") {
    for (int trial = 0; trial < 5; ++trial) {
      Tensor x = random_tensor({2, 2, 2, 5, 2, 3}, rng);
      Tensor w = random_tensor({3, 2, 3}, rng);
      CHECK(max_abs_diff(ops::conv_temporal(x, w, 1, 1),
                         conv_temporal_oracle(x, w, 1, 1)) < 1e-12);
    }
  }
}

TEST_CASE("split and concat channels") {
  Rng rng(8);
  Tensor x = random_tensor({2, 5, 2, 1, 2, 2}, rng);

  SUBCASE("round trip is bitwise for every count") {
    for (std::size_t k = 0; k <= 5; ++k) {
      auto [a, b] = ops::split_channels(x, k);
      CHECK(ops::concat_channels(a, b).bit_equal(x));
    }
  }

  SUBCASE("degenerate splits produce empty halves") {
    auto [a, b] = ops::split_channels(x, 5);
    CHECK(a.bit_equal(x));
    CHECK(b.shape()[1] == 0);
    auto [c, d] = ops::split_channels(x, 0);
    CHECK(c.shape()[1] == 0);
    CHECK(d.bit_equal(x));
    CHECK(ops::concat_channels(c, x).bit_equal(x));
  }

  SUBCASE("concat places b after a") {
    Tensor a = random_tensor({1, 2, 1, 1, 1, 2}, rng);
    Tensor b = random_tensor({1, 3, 1, 1, 1, 2}, rng);
    Tensor y = ops::concat_channels(a, b);
    CHECK(y.shape()[1] == 5);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < 2; ++i)
        CHECK(y(0, 2 + j, 0, 0, 0, i) == b(0, j, 0, 0, 0, i));
  }

  SUBCASE("mismatched extents are rejected") {
    CHECK_THROWS_AS(ops::split_channels(x, 9), std::invalid_argument);
    Tensor other = random_tensor({2, 3, 2, 1, 2, 3}, rng);
    CHECK_THROWS_AS(ops::concat_channels(x, other), std::invalid_argument);
  }
}

TEST_CASE("temporal_shift") {
  Rng rng(9);
  SUBCASE("fraction 0 is identity") {
    Tensor x = random_tensor({1, 4, 2, 3, 2, 2}, rng);
    CHECK(ops::temporal_shift(x, 0.0).bit_equal(x));
  }

  SUBCASE("T=1 zeroes the shifted channels") {
    Tensor x = Tensor::ones({1, 4, 2, 1, 2, 2});
    Tensor y = ops::temporal_shift(x, 0.25);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        CHECK(y(0, c, 0, 0, i / 2, i % 2) == 0.0);
    for (std::size_t c = 2; c < 4; ++c)
      for (std::size_t i = 0; i < 4; ++i)
        CHECK(y(0, c, 0, 0, i / 2, i % 2) == 1.0);
  }

  SUBCASE("C=8, fraction 1/8 moves exactly one channel each way") {
    Tensor x = Tensor::zeros({1, 8, 1, 3, 1, 1});
    for (std::size_t c = 0; c < 8; ++c)
      for (std::size_t t = 0; t < 3; ++t)
        x(0, c, 0, t, 0, 0) = 10.0 * static_cast<double>(c) +
                              static_cast<double>(t);
    Tensor y = ops::temporal_shift(x, 0.125);
    // channel 0 shifted forward
    CHECK(y(0, 0, 0, 0, 0, 0) == 0.0);
    CHECK(y(0, 0, 0, 1, 0, 0) == x(0, 0, 0, 0, 0, 0));
    CHECK(y(0, 0, 0, 2, 0, 0) == x(0, 0, 0, 1, 0, 0));
    // channel 1 shifted backward
    CHECK(y(0, 1, 0, 0, 0, 0) == x(0, 1, 0, 1, 0, 0));
    CHECK(y(0, 1, 0, 2, 0, 0) == 0.0);
    // channels 2..7 untouched
    for (std::size_t c = 2; c < 8; ++c)
      for (std::size_t t = 0; t < 3; ++t)
        CHECK(y(0, c, 0, t, 0, 0) == x(0, c, 0, t, 0, 0));
  }
}

TEST_CASE("permute and reshape") {
  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  std::size_t perm[] = {1, 0};
  Tensor y = ops::permute(x, perm);
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y(0, 0) == 1.0);
  CHECK(y(2, 1) == 6.0);

  Tensor z = ops::reshape(x, {3, 2});
  CHECK(z(0, 1) == 2.0);
  CHECK_THROWS_AS(ops::reshape(x, {4, 2}), std::invalid_argument);
}
