#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace stairpool {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. Layout for feature maps is
// (batch, channel, spatial...) with 2 or 3 spatial axes.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  bool requires_grad() const noexcept { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const noexcept { return grad_.has_value(); }
  const std::vector<double>& grad() const;
  // Allocates a zero gradient on first use.
  std::vector<double>& grad_mut();
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  bool requires_grad_ = false;
  std::optional<std::vector<double>> grad_;
};

// A trainable tensor with its registry name and SGD momentum buffer.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  std::vector<double> momentum;
};

// Extents of a feature map viewed as (n, c, d, h, w); 2D maps have d == 1.
struct Geometry {
  std::int64_t n = 1, c = 1, d = 1, h = 1, w = 1;
  int spatial_dims = 2;

  static Geometry of(const Shape& shape);
  std::int64_t spatial() const noexcept { return d * h * w; }
};

}  // namespace stairpool
