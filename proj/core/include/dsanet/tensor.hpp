#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dsanet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Video feature axis order used library-wide: (N, C, U, T, H, W).
inline constexpr std::size_t kAxisN = 0;
inline constexpr std::size_t kAxisC = 1;
inline constexpr std::size_t kAxisU = 2;
inline constexpr std::size_t kAxisT = 3;
inline constexpr std::size_t kAxisH = 4;
inline constexpr std::size_t kAxisW = 5;

// Dense row-major tensor of 64-bit reals. A tensor is a plain value: copies
// are deep, and operations never mutate their inputs. Zero extents are legal
// only as split/concat intermediates (e.g. an empty channel slice).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value) { return full({1}, value); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t extent(std::size_t axis) const;

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Multi-index access; index count must equal rank.
  template <typename... Ix>
  double& operator()(Ix... ix) {
    return data_[offset_of({static_cast<std::size_t>(ix)...})];
  }
  template <typename... Ix>
  double operator()(Ix... ix) const {
    return data_[offset_of({static_cast<std::size_t>(ix)...})];
  }

  std::size_t offset_of(std::span<const std::size_t> index) const;
  std::size_t offset_of(std::initializer_list<std::size_t> index) const {
    return offset_of(std::span<const std::size_t>(index.begin(), index.size()));
  }

  // Row-major strides of this shape.
  std::vector<std::size_t> strides() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  // Bitwise equality of shape and every stored value.
  bool bit_equal(const Tensor& other) const;

 private:
  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {}

  Shape shape_;
  std::vector<double> data_;
};

// Throws std::invalid_argument mentioning `what` unless `cond` holds.
void require(bool cond, const std::string& what);

// Deterministic sum that depends only on the multiset of addends, not their
// order: values are sorted into a canonical order before a left-to-right
// accumulation. Used where an invariant demands a permutation-insensitive
// reduction, e.g. pooling means and the snippet consensus.
double stable_sum(std::span<const double> values);

}  // namespace dsanet
