#include <doctest.h>

#include <stdexcept>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dsanet/serialize.hpp"
#include "dsanet/tensor.hpp"

using namespace dsanet;

TEST_CASE("tensor shape and data invariants") {
  Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t(1, 2) == 6.0);
  CHECK(t.strides() == std::vector<std::size_t>{3, 1});

  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({}), std::invalid_argument);
}

TEST_CASE("bit_equal distinguishes signed zero") {
  Tensor a = Tensor::from_data({2}, {0.0, 1.0});
  Tensor b = Tensor::from_data({2}, {-0.0, 1.0});
  CHECK(a.bit_equal(a));
  CHECK_FALSE(a.bit_equal(b));
}

TEST_CASE("stable_sum is permutation independent") {
  std::vector<double> values{1e16, 1.0, -1e16, 3.25, 1e-3, 7.5, -2.25, 1e8};
  std::vector<double> shuffled{7.5, 1e-3, 1e8, -1e16, 1.0, -2.25, 3.25, 1e16};
  CHECK(stable_sum(values) == stable_sum(shuffled));

  std::vector<double> reversed(values.rbegin(), values.rend());
  CHECK(stable_sum(values) == stable_sum(reversed));
}

TEST_CASE("dst format writes the documented bytes") {
  Tensor t = Tensor::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  std::ostringstream os(std::ios::binary);
  write_tensor(t, os);
  const std::string bytes = os.str();

  // header: DSAT, version 1, rank 2 (u32 LE), extents 2,2 (u64 LE)
  const unsigned char expected_header[] = {
      'D', 'S', 'A', 'T', 0x01, 0x02, 0x00, 0x00, 0x00,
      0x02, 0, 0, 0, 0, 0, 0, 0,
      0x02, 0, 0, 0, 0, 0, 0, 0};
  REQUIRE(bytes.size() == sizeof(expected_header) + 4 * 8);
  for (std::size_t i = 0; i < sizeof(expected_header); ++i) {
    CHECK(static_cast<unsigned char>(bytes[i]) == expected_header[i]);
  }
  // 1.0 as IEEE-754 binary64 little-endian
  const unsigned char one[] = {0, 0, 0, 0, 0, 0, 0xf0, 0x3f};
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(static_cast<unsigned char>(bytes[sizeof(expected_header) + i]) ==
          one[i]);
  }

  std::istringstream is(bytes, std::ios::binary);
  Tensor back = read_tensor(is);
  CHECK(back.bit_equal(t));
}

TEST_CASE("dst rejects corrupt input") {
  std::istringstream bad_magic(std::string("NOPE\x01"), std::ios::binary);
  CHECK_THROWS(read_tensor(bad_magic));

  Tensor t = Tensor::from_data({3}, {1, 2, 3});
  std::ostringstream os(std::ios::binary);
  write_tensor(t, os);
  std::string truncated = os.str().substr(0, os.str().size() - 5);
  std::istringstream is(truncated, std::ios::binary);
  CHECK_THROWS(read_tensor(is));
}

TEST_CASE("bundle round trip") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "dsanet_bundle_test";
  fs::remove_all(dir);

  std::map<std::string, Tensor> tensors;
  tensors["w"] = Tensor::from_data({2, 2}, {0.5, -1.25, 3.0, 0.0});
  tensors["b"] = Tensor::from_data({2}, {1e-9, -7.0});
  std::map<std::string, double> numbers{{"alpha", 2.0}, {"beta", 0.125}};
  save_bundle(dir, tensors, numbers);

  auto [loaded, config] = load_bundle(dir);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded.at("w").bit_equal(tensors.at("w")));
  CHECK(loaded.at("b").bit_equal(tensors.at("b")));
  CHECK(config.at("alpha") == 2.0);
  CHECK(config.at("beta") == 0.125);
  fs::remove_all(dir);
}
