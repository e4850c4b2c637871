#pragma once

#include <functional>

#include "wsiseg/tensor.hpp"

namespace wsiseg::ad {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
// coordinate of x. x is restored before returning.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                                  double h = 1e-5);

// Same, but perturbs `x` in place and evaluates the nullary `f`; only the
// listed coordinates are probed (others are left zero).
Tensor finite_difference_gradient_inplace(const std::function<double()>& f, Tensor& x,
                                          const std::vector<std::size_t>& coords,
                                          double h = 1e-5);

// max_i |a_i - b_i| / max(max_i |b_i|, floor): error relative to the
// reference's infinity norm.
double max_relative_error(std::span<const double> a, std::span<const double> reference,
                          double floor = 1e-12);

}  // namespace wsiseg::ad
