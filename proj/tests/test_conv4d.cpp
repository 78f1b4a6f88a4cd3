#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "dsanet/conv4d.hpp"
#include "dsanet/rng.hpp"

using namespace dsanet;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
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

TEST_CASE("conv4d delta kernel is identity") {
  Rng rng(1);
  Tensor v = random_tensor({2, 3, 3, 2, 2, 2}, rng);
  Kernel4D k{Tensor::zeros({3, 3, 3, 1, 1, 1})};
  for (std::size_t c = 0; c < 3; ++c) k.values(c, c, 1, 0, 0, 0) = 1.0;
  CHECK(conv4d(v, k).bit_equal(v));
}

TEST_CASE("conv4d zero kernel gives zero output") {
  Rng rng(2);
  Tensor v = random_tensor({1, 2, 2, 2, 2, 2}, rng);
  Kernel4D k{Tensor::zeros({2, 2, 3, 1, 1, 1})};
  Tensor y = conv4d(v, k);
  for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("conv4d hand-expanded two-snippet case") {
  const double a = 0.7, b = -1.3;
  const double k0 = 0.2, k1 = 0.5, k2 = 0.3;
  Tensor v = Tensor::zeros({1, 1, 2, 1, 1, 1});
  v(0, 0, 0, 0, 0, 0) = a;
  v(0, 0, 1, 0, 0, 0) = b;
  Kernel4D k{Tensor::zeros({1, 1, 3, 1, 1, 1})};
  k.values(0, 0, 0, 0, 0, 0) = k0;
  k.values(0, 0, 1, 0, 0, 0) = k1;
  k.values(0, 0, 2, 0, 0, 0) = k2;

  Tensor y = conv4d(v, k);
  CHECK(y(0, 0, 0, 0, 0, 0) == doctest::Approx(k1 * a + k2 * b));
  CHECK(y(0, 0, 1, 0, 0, 0) == doctest::Approx(k0 * a + k1 * b));
}

TEST_CASE("conv4d rejects malformed kernels") {
  Tensor v = Tensor::zeros({1, 2, 2, 1, 1, 1});
  Kernel4D even{Tensor::zeros({2, 2, 2, 1, 1, 1})};
  CHECK_THROWS_AS(conv4d(v, even), std::invalid_argument);
  Kernel4D wrong_cin{Tensor::zeros({2, 3, 3, 1, 1, 1})};
  CHECK_THROWS_AS(conv4d(v, wrong_cin), std::invalid_argument);
}

TEST_CASE("conv4d is linear in the kernel") {
  Rng rng(3);
  Tensor v = random_tensor({1, 2, 3, 2, 2, 2}, rng);
  Kernel4D k1{random_tensor({2, 2, 3, 1, 1, 1}, rng)};
  Kernel4D k2{random_tensor({2, 2, 3, 1, 1, 1}, rng)};
  const double a = 0.7, b = -2.25;
  Kernel4D mix{Tensor::zeros({2, 2, 3, 1, 1, 1})};
  for (std::size_t i = 0; i < mix.values.size(); ++i) {
    mix.values[i] = a * k1.values[i] + b * k2.values[i];
  }
  Tensor lhs = conv4d(v, mix);
  Tensor y1 = conv4d(v, k1);
  Tensor y2 = conv4d(v, k2);
  Tensor rhs = Tensor::zeros(lhs.shape());
  for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = a * y1[i] + b * y2[i];
  CHECK(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("embed_dsa_kernel places rows on the channel diagonal") {
  DynamicKernel rows{Tensor::full({1, 2, 3}, 1.0 / 3)};
  Kernel4D k = embed_dsa_kernel(rows, 2);
  CHECK(k.values.shape() == Shape{2, 2, 3, 1, 1, 1});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t l = 0; l < 3; ++l)
      CHECK(k.values(c, c, l, 0, 0, 0) == doctest::Approx(1.0 / 3));
  // cross-channel entries are exactly zero
  for (std::size_t l = 0; l < 3; ++l) {
    CHECK(k.values(0, 1, l, 0, 0, 0) == 0.0);
    CHECK(k.values(1, 0, l, 0, 0, 0) == 0.0);
  }

  CHECK_THROWS_AS(embed_dsa_kernel(rows, 3), std::invalid_argument);
}

TEST_CASE("segment_conv equals conv4d under the embedding") {
  // small sweep here; the full grid runs via oracle_sweep in acceptance
  Rng rng(4);
  for (std::size_t c = 1; c <= 3; ++c)
    for (std::size_t u = 2; u <= 4; ++u) {
      Tensor v = random_tensor({1, c, u, 2, 2, 1}, rng);
      DynamicKernel rows{Tensor::zeros({1, c, 3})};
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (std::size_t l = 0; l < 3; ++l) {
          rows.values(0, ch, l) = rng.uniform(0.05, 1.0);
          sum += rows.values(0, ch, l);
        }
        for (std::size_t l = 0; l < 3; ++l) rows.values(0, ch, l) /= sum;
      }
      Tensor direct = segment_conv(v, rows);
      Tensor viaconv4d = conv4d(v, embed_dsa_kernel(rows, c));
      CHECK(max_abs_diff(direct, viaconv4d) < 1e-12);
    }
}

TEST_CASE("oracle_sweep runs the documented grid") {
  OracleSweepOptions options;
  options.max_extent = 2;
  options.seeds = 2;
  OracleSweepResult r = oracle_sweep(options);
  // C in {1,2}, U in {2}, T,H,W in {1,2}: 16 shapes x 2 seeds
  CHECK(r.cells == 32);
  CHECK(r.max_deviation >= 0.0);
  CHECK(r.max_deviation < 1e-12);

  OracleSweepOptions parallel = options;
  parallel.jobs = 4;
  OracleSweepResult r2 = oracle_sweep(parallel);
  CHECK(r2.max_deviation == r.max_deviation);
  CHECK(r2.worst_shape == r.worst_shape);
}
