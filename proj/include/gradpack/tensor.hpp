#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace gradpack {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace memory {

// Byte accounting for tensor storage, per thread. Tests use it to check
// that fast paths never materialize an [N x d] intermediate.
struct Stats {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
  std::size_t allocations = 0;
};

Stats stats() noexcept;
void reset_peak() noexcept;

void record_alloc(std::size_t bytes) noexcept;
void record_free(std::size_t bytes) noexcept;

// Peak of tensor storage allocated on top of what was live at construction.
class PeakScope {
 public:
  PeakScope() noexcept;
  std::size_t peak_bytes() const noexcept;

 private:
  std::size_t base_;
};

}  // namespace memory

template <class T>
struct CountingAllocator {
  using value_type = T;

  CountingAllocator() noexcept = default;
  template <class U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    memory::record_alloc(n * sizeof(T));
    return static_cast<T*>(::operator new(n * sizeof(T)));
  }
  void deallocate(T* p, std::size_t n) noexcept {
    memory::record_free(n * sizeof(T));
    ::operator delete(p);
  }

  friend bool operator==(const CountingAllocator&, const CountingAllocator&) {
    return true;
  }
};

// Dense row-major f64 array. product(shape) == numel() always holds.
class Tensor {
 public:
  using Storage = std::vector<double, CountingAllocator<double>>;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::span<const double> values);
  Tensor(Shape shape, std::initializer_list<double> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const double> values() const noexcept {
    return {data_.data(), data_.size()};
  }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  // Bounds-checked multi-index access.
  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  // Leading axis is the batch axis; a "sample" is one slice along it.
  std::size_t sample_size() const;
  std::span<double> sample(std::size_t n);
  std::span<const double> sample(std::size_t n) const;

  void reshape(Shape shape);
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double value);

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale);

 private:
  Shape shape_;
  Storage data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double scale);

// Same shape and identical bit patterns.
bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace gradpack
