#include "wsiseg/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace wsiseg::ad {

AdamState AdamState::for_param(const Tensor& param, AdamHyper hyper) {
  AdamState s;
  s.m.assign(param.size(), 0.0);
  s.v.assign(param.size(), 0.0);
  s.hyper = hyper;
  return s;
}

void adam_update(Tensor& param, AdamState& state, double lr) {
  if (!param.has_grad()) throw std::invalid_argument("adam_update: parameter has no gradient");
  if (state.m.size() != param.size() || state.v.size() != param.size())
    throw std::invalid_argument("adam_update: state shape does not match parameter");
  const auto& h = state.hyper;
  ++state.t;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));
  auto w = param.data();
  auto g = param.grad();
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.m[i] = h.beta1 * state.m[i] + (1.0 - h.beta1) * g[i];
    state.v[i] = h.beta2 * state.v[i] + (1.0 - h.beta2) * g[i] * g[i];
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + h.eps);
  }
}

}  // namespace wsiseg::ad
