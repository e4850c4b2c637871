#include "wsiseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wsiseg::ad {

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                                  double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

Tensor finite_difference_gradient_inplace(const std::function<double()>& f, Tensor& x,
                                          const std::vector<std::size_t>& coords, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  Tensor g(x.shape());
  for (std::size_t i : coords) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f();
    x[i] = orig - h;
    const double down = f();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double max_relative_error(std::span<const double> a, std::span<const double> reference,
                          double floor) {
  if (a.size() != reference.size()) throw std::invalid_argument("length mismatch");
  double scale = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    scale = std::max(scale, std::abs(reference[i]));
    worst = std::max(worst, std::abs(a[i] - reference[i]));
  }
  return worst / std::max(scale, floor);
}

}  // namespace wsiseg::ad
