#include "dsanet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace dsanet {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

Tensor Tensor::zeros(Shape shape) {
  require(!shape.empty(), "tensor rank must be >= 1");
  std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  require(!shape.empty(), "tensor rank must be >= 1");
  std::size_t n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  require(!shape.empty(), "tensor rank must be >= 1");
  require(numel(shape) == data.size(),
          "data length " + std::to_string(data.size()) +
              " does not match shape " + shape_str(shape));
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::extent(std::size_t axis) const {
  require(axis < shape_.size(), "axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(shape_));
  return shape_[axis];
}

std::size_t Tensor::offset_of(std::span<const std::size_t> index) const {
  require(index.size() == shape_.size(),
          "index rank " + std::to_string(index.size()) + " vs tensor shape " +
              shape_str(shape_));
  std::size_t off = 0;
  for (std::size_t a = 0; a < shape_.size(); ++a) {
    off = off * shape_[a] + index[a];
  }
  return off;
}

std::vector<std::size_t> Tensor::strides() const {
  std::vector<std::size_t> s(shape_.size(), 1);
  for (std::size_t a = shape_.size(); a-- > 1;) {
    s[a - 1] = s[a] * shape_[a];
  }
  return s;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool Tensor::bit_equal(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    // Signed-zero and value equality; inputs carry no NaN by invariant.
    if (data_[i] != other.data_[i]) return false;
    if (std::signbit(data_[i]) != std::signbit(other.data_[i])) return false;
  }
  return true;
}

double stable_sum(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  // Canonical order: by value, signed zeros disambiguated by sign bit. Equal
  // values are interchangeable, so the left-to-right sum below is a function
  // of the multiset only.
  std::sort(sorted.begin(), sorted.end(), [](double a, double b) {
    if (a != b) return a < b;
    return std::signbit(a) && !std::signbit(b);
  });
  double total = 0.0;
  for (double v : sorted) total += v;
  return total;
}

}  // namespace dsanet
