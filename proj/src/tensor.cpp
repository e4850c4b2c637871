#include "wsiseg/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace wsiseg {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_))
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string(shape_));
}

void Tensor::set_grad(std::span<const double> g) {
  if (g.size() != data_.size()) throw std::invalid_argument("gradient shape mismatch");
  grad_.assign(g.begin(), g.end());
}

void Tensor::add_grad(std::span<const double> g) {
  if (g.size() != data_.size()) throw std::invalid_argument("gradient shape mismatch");
  if (grad_.empty()) grad_.assign(data_.size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) grad_[i] += g[i];
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size())
    throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                shape_string(shape));
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace wsiseg
