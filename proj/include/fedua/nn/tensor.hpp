#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedua::nn {

using Shape = std::vector<std::size_t>;

std::size_t element_count(std::span<const std::size_t> shape) noexcept;
std::string shape_string(std::span<const std::size_t> shape);

/// Dense row-major array of doubles with an optional gradient buffer of the
/// same length. The gradient is absent until something allocates it.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  bool has_grad() const noexcept { return !grad_.empty() || data_.empty(); }
  /// Requires has_grad(); throws StateError otherwise.
  std::span<double> grad();
  std::span<const double> grad() const;
  /// Allocates a zero gradient if absent.
  void ensure_grad();
  void zero_grad() noexcept;
  void drop_grad() noexcept;

  /// Same data viewed with another shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

}  // namespace fedua::nn
