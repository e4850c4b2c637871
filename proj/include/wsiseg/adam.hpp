#pragma once

#include <cstdint>
#include <vector>

#include "wsiseg/tensor.hpp"

namespace wsiseg::ad {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments for one parameter tensor.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  AdamHyper hyper;

  static AdamState for_param(const Tensor& param, AdamHyper hyper = {});
};

// One bias-corrected Adam step using param.grad(). Throws if the parameter
// has no gradient or the state does not match its shape.
void adam_update(Tensor& param, AdamState& state, double lr);

}  // namespace wsiseg::ad
