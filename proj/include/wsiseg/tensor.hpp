#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace wsiseg {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major float64 array. Optionally carries a gradient buffer of the
// same shape; an empty buffer means "no gradient".
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  void set_grad(std::span<const double> g);
  void add_grad(std::span<const double> g);
  void zero_grad();
  void clear_grad() { grad_.clear(); }

  // Same data, new shape with identical element count.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
  bool requires_grad_ = false;
};

}  // namespace wsiseg
