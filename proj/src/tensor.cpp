#include "gradpack/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "gradpack/errors.hpp"

namespace gradpack {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << " x ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace memory {
namespace {
thread_local Stats tls_stats;
}

Stats stats() noexcept { return tls_stats; }

void reset_peak() noexcept { tls_stats.peak_bytes = tls_stats.live_bytes; }

void record_alloc(std::size_t bytes) noexcept {
  tls_stats.live_bytes += bytes;
  tls_stats.peak_bytes = std::max(tls_stats.peak_bytes, tls_stats.live_bytes);
  ++tls_stats.allocations;
}

void record_free(std::size_t bytes) noexcept {
  tls_stats.live_bytes -= std::min(bytes, tls_stats.live_bytes);
}

PeakScope::PeakScope() noexcept : base_(tls_stats.live_bytes) { reset_peak(); }

std::size_t PeakScope::peak_bytes() const noexcept {
  return tls_stats.peak_bytes > base_ ? tls_stats.peak_bytes - base_ : 0;
}

}  // namespace memory

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::span<const double> values)
    : shape_(std::move(shape)) {
  if (shape_numel(shape_) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape_) +
                         " cannot hold " + std::to_string(values.size()) +
                         " values");
  }
  data_.assign(values.begin(), values.end());
}

Tensor::Tensor(Shape shape, std::initializer_list<double> values)
    : Tensor(std::move(shape), std::span<const double>(values.begin(), values.size())) {}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape_));
  }
  return shape_[axis];
}

namespace {
std::size_t flat_index(const Shape& shape, std::initializer_list<std::size_t> index) {
  if (index.size() != shape.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) +
                         " does not match tensor " + shape_string(shape));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape[axis]) {
      throw DimensionError("index " + std::to_string(i) + " out of range on axis " +
                           std::to_string(axis) + " of " + shape_string(shape));
    }
    flat = flat * shape[axis] + i;
    ++axis;
  }
  return flat;
}
}  // namespace

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[flat_index(shape_, index)];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[flat_index(shape_, index)];
}

std::size_t Tensor::sample_size() const {
  if (shape_.empty()) throw DimensionError("scalar tensor has no batch axis");
  return shape_[0] == 0 ? 0 : data_.size() / shape_[0];
}

std::span<double> Tensor::sample(std::size_t n) {
  const auto s = sample_size();
  if (n >= shape_[0]) throw DimensionError("sample index out of range");
  return {data_.data() + n * s, s};
}

std::span<const double> Tensor::sample(std::size_t n) const {
  const auto s = sample_size();
  if (n >= shape_[0]) throw DimensionError("sample index out of range");
  return {data_.data() + n * s, s};
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                         shape_string(shape));
  }
  shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  copy.reshape(std::move(shape));
  return copy;
}

Tensor Tensor::reshaped(Shape shape) && {
  reshape(std::move(shape));
  return std::move(*this);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw DimensionError("cannot add " + shape_string(other.shape_) + " to " +
                         shape_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw DimensionError("cannot subtract " + shape_string(other.shape_) +
                         " from " + shape_string(shape_));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (auto& v : data_) v *= scale;
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double scale) { return a *= scale; }

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.numel() * sizeof(double)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    throw DimensionError("cannot compare " + shape_string(a.shape()) + " with " +
                         shape_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace gradpack
