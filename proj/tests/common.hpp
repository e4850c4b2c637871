#pragma once

// Helpers shared by the unit tests and the acceptance binary: random
// tensors, the per-op finite-difference harness and the toy two-model
// composite with its single-tape reference gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "wsiseg/featuremap.hpp"
#include "wsiseg/gradcheck.hpp"
#include "wsiseg/models.hpp"
#include "wsiseg/ops.hpp"
#include "wsiseg/rng.hpp"
#include "wsiseg/tensor_io.hpp"
#include "wsiseg/trainer.hpp"

namespace testing {

using namespace wsiseg;
using ad::Tape;
using ad::Var;

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = scale * rng.normal();
  return t;
}

using OpBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

// Checks d/dx_i of sum(R * op(x_0..x_k)) for a fixed random R against
// central differences; returns the worst relative error over all inputs.
inline double op_gradient_error(const std::vector<Tensor>& inputs, const OpBuilder& build,
                                std::uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  Tensor weights;
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.input(t, true));
    Var out = build(tape, vars);
    weights = random_tensor(rng, out.shape());
    tape.backward(ad::inner_product(out, weights));
    for (const auto& v : vars) {
      auto g = v.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(v.size(), 0.0);
    }
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto f = [&](const Tensor& xi) {
      Tape tape(ad::GradMode::no_grad);
      std::vector<Var> vars;
      for (std::size_t j = 0; j < inputs.size(); ++j) vars.push_back(tape.constant(j == i ? xi : inputs[j]));
      return ad::inner_product(build(tape, vars), weights).value()[0];
    };
    const Tensor fd = ad::finite_difference_gradient(f, inputs[i], h);
    worst = std::max(worst, ad::max_relative_error(analytic[i], fd.data()));
  }
  return worst;
}

struct NamedCheck {
  std::string name;
  double error;
};

// Every layer op on small random inputs.
inline std::vector<NamedCheck> layer_op_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedCheck> out;
  auto check = [&](const std::string& name, std::vector<Tensor> in, OpBuilder b) {
    out.push_back({name, op_gradient_error(in, b, hash_combine(seed, out.size()))});
  };
  check("relu", {random_tensor(rng, {2, 3, 4})}, [](Tape&, const std::vector<Var>& v) { return ad::relu(v[0]); });
  check("conv2d pad1", {random_tensor(rng, {2, 3, 5, 5}), random_tensor(rng, {4, 3, 3, 3}), random_tensor(rng, {4})},
        [](Tape&, const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], v[2], 1, 1); });
  check("conv2d stride2", {random_tensor(rng, {1, 2, 7, 6}), random_tensor(rng, {3, 2, 3, 3}), random_tensor(rng, {3})},
        [](Tape&, const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], v[2], 2, 0); });
  check("conv2d unbatched 1x1", {random_tensor(rng, {3, 4, 4}), random_tensor(rng, {2, 3, 1, 1}), random_tensor(rng, {2})},
        [](Tape&, const std::vector<Var>& v) { return ad::conv2d(v[0], v[1], v[2]); });
  check("maxpool2d", {random_tensor(rng, {2, 2, 6, 5})}, [](Tape&, const std::vector<Var>& v) { return ad::maxpool2d(v[0], 2, 2); });
  check("nearest_upsample", {random_tensor(rng, {1, 2, 3, 3})},
        [](Tape&, const std::vector<Var>& v) { return ad::nearest_upsample(v[0], 2); });
  check("concat_channels", {random_tensor(rng, {2, 2, 3, 3}), random_tensor(rng, {2, 3, 3, 3})},
        [](Tape&, const std::vector<Var>& v) { return ad::concat_channels(v[0], v[1]); });
  check("fully_connected", {random_tensor(rng, {3, 5}), random_tensor(rng, {5, 4}), random_tensor(rng, {4})},
        [](Tape&, const std::vector<Var>& v) { return ad::fully_connected(v[0], v[1], v[2]); });
  check("fully_connected unbatched", {random_tensor(rng, {5}), random_tensor(rng, {5, 2}), random_tensor(rng, {2})},
        [](Tape&, const std::vector<Var>& v) { return ad::fully_connected(v[0], v[1], v[2]); });
  check("flatten", {random_tensor(rng, {2, 3, 2, 2})}, [](Tape&, const std::vector<Var>& v) { return ad::flatten(v[0]); });
  check("mul", {random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})},
        [](Tape&, const std::vector<Var>& v) { return ad::mul(v[0], v[1]); });
  check("sum", {random_tensor(rng, {3, 4})}, [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); });
  {
    const Tensor w = random_tensor(rng, {3, 4});
    check("inner_product", {random_tensor(rng, {3, 4})},
          [w](Tape&, const std::vector<Var>& v) { return ad::inner_product(v[0], w); });
  }
  {
    const std::vector<ad::CellIndex> cells{{0, 0, 1}, {1, 2, 2}, {0, 2, 0}, {1, 0, 0}};
    check("scatter_to_map", {random_tensor(rng, {4, 3})},
          [cells](Tape&, const std::vector<Var>& v) { return ad::scatter_to_map(v[0], cells, 2, 3, 3); });
  }
  check("map_to_cells", {random_tensor(rng, {2, 3, 2, 2})}, [](Tape&, const std::vector<Var>& v) { return ad::map_to_cells(v[0]); });
  {
    std::vector<int> labels(6);
    std::vector<std::uint8_t> mask(6);
    for (std::size_t i = 0; i < 6; ++i) {
      labels[i] = static_cast<int>(rng.below(3));
      mask[i] = i == 0 || rng.bernoulli(0.7);
    }
    check("masked_softmax_cross_entropy", {random_tensor(rng, {6, 3})}, [labels, mask](Tape&, const std::vector<Var>& v) {
      return ad::masked_softmax_cross_entropy(v[0], labels, mask);
    });
  }
  return out;
}

// A small architecture that still exercises every layer kind.
inline model::ArchConfig tiny_arch() {
  model::ArchConfig a;
  a.crop = 8;
  a.conv_channels = {3, 4};
  a.feature_dim = 4;
  a.seg_channels = {4};
  a.seg_bottleneck = 6;
  a.map_rows = 4;
  a.map_cols = 4;
  return a;
}

inline void randomize_biases(const model::NamedTensors& tensors, Rng& rng, double scale = 0.1) {
  for (auto& [name, t] : tensors)
    if (name.ends_with(".b"))
      for (auto& v : t->data()) v = scale * rng.normal();
}

inline double tensor_gradient_error(const std::function<double()>& loss, const model::NamedTensors& tensors,
                                    const std::function<void()>& analytic_backward, std::string* worst_name = nullptr) {
  analytic_backward();
  double worst = 0.0;
  for (auto& [name, t] : tensors) {
    const std::vector<double> analytic(t->grad().begin(), t->grad().end());
    std::vector<std::size_t> coords(t->size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    const Tensor fd = ad::finite_difference_gradient_inplace(loss, *t, coords);
    const double e = ad::max_relative_error(analytic, fd.data());
    if (e > worst && worst_name) *worst_name = name;
    worst = std::max(worst, e);
  }
  return worst;
}

// Extractor (logits mode, CE loss) checked on every parameter.
inline double extractor_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto arch = tiny_arch();
  auto p = model::init_extractor(seed, arch);
  randomize_biases(model::named_tensors(p), rng);
  const Tensor x = random_tensor(rng, {3, 3, arch.crop, arch.crop});
  const std::vector<int> labels{0, 1, 1};
  const std::vector<std::uint8_t> mask{1, 1, 1};
  auto loss_var = [&](Tape& tape) {
    Var in = tape.constant(x);
    return ad::masked_softmax_cross_entropy(model::extractor_forward(tape, p, in, model::ExtractorOutput::logits), labels, mask);
  };
  return tensor_gradient_error(
      [&] {
        Tape tape(ad::GradMode::no_grad);
        return loss_var(tape).value()[0];
      },
      model::named_tensors(p),
      [&] {
        Tape tape;
        tape.backward(loss_var(tape));
      });
}

// Segmentation network, masked CE over cells, checked on every parameter
// and on the input feature map.
inline double segmentation_gradient_error(std::uint64_t seed) {
  Rng rng(seed);
  const auto arch = tiny_arch();
  auto p = model::init_segmentation(seed, arch);
  randomize_biases(model::named_tensors(p), rng);
  Tensor x = random_tensor(rng, {2, arch.feature_dim, arch.map_rows, arch.map_cols});
  const std::size_t cells = 2 * arch.map_rows * arch.map_cols;
  std::vector<int> labels(cells);
  std::vector<std::uint8_t> mask(cells);
  for (std::size_t i = 0; i < cells; ++i) {
    labels[i] = static_cast<int>(rng.below(2));
    mask[i] = rng.bernoulli(0.6);
  }
  mask[0] = 1;
  model::NamedTensors tensors = model::named_tensors(p);
  tensors.emplace_back("input", &x);
  auto loss_var = [&](Tape& tape) {
    Var in = tape.parameter(x);
    return ad::masked_softmax_cross_entropy(ad::map_to_cells(model::segmentation_forward(tape, p, in)), labels, mask);
  };
  return tensor_gradient_error(
      [&] {
        Tape tape(ad::GradMode::no_grad);
        return loss_var(tape).value()[0];
      },
      tensors,
      [&] {
        Tape tape;
        tape.backward(loss_var(tape));
      });
}

// side x side patches of 8x8x3 filling the grid (16 by default), feature
// dim 4, one side x side map and a depth-1 segmentation net.
struct Toy {
  model::ArchConfig arch;
  model::FeatureExtractorParams ext;
  model::SegmentationParams seg;
  Tensor patches;
  fmap::SlideLayout layout;
};

inline Toy make_toy(std::uint64_t seed, std::size_t side = 4) {
  Toy t;
  t.arch = model::ArchConfig{};
  t.arch.crop = 8;
  t.arch.conv_channels = {4};
  t.arch.feature_dim = 4;
  t.arch.seg_channels = {4};
  t.arch.seg_bottleneck = 8;
  t.arch.map_rows = side;
  t.arch.map_cols = side;
  Rng rng(seed);
  t.ext = model::init_extractor(hash_combine(seed, 1), t.arch);
  t.seg = model::init_segmentation(hash_combine(seed, 2), t.arch);
  randomize_biases(model::named_tensors(t.ext), rng);
  randomize_biases(model::named_tensors(t.seg), rng);
  t.patches = random_tensor(rng, {side * side, 3, 8, 8});
  std::vector<prep::GridPos> pos;
  std::vector<prep::PatchLabel> labels;
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      pos.push_back({r + 3, c + 5});
      const auto u = rng.below(3);
      labels.push_back(u == 0 ? prep::PatchLabel::tumor : u == 1 ? prep::PatchLabel::normal : prep::PatchLabel::nolabel);
    }
  labels[0] = prep::PatchLabel::tumor;
  labels[1] = prep::PatchLabel::normal;
  t.layout = fmap::build_layout(pos, labels, side, side, true);
  return t;
}

struct Gradients {
  double loss = 0.0;
  std::vector<std::vector<double>> extractor;  // feature_tensors order
  std::vector<std::vector<double>> segmentation;
};

inline Gradients collect(double loss, model::FeatureExtractorParams& ext, model::SegmentationParams& seg) {
  Gradients g;
  g.loss = loss;
  for (auto& [n, t] : train::feature_tensors(ext)) g.extractor.emplace_back(t->grad().begin(), t->grad().end());
  for (auto& [n, t] : model::named_tensors(seg)) g.segmentation.emplace_back(t->grad().begin(), t->grad().end());
  return g;
}

// Reference: the whole composite on one recording tape.
// `cell_labels` overrides the layout's per-cell labels when non-empty.
inline Gradients monolithic_gradients(model::FeatureExtractorParams& ext, model::SegmentationParams& seg,
                                      const Tensor& patches, const fmap::SlideLayout& layout,
                                      train::LossReduction reduction = train::LossReduction::mean,
                                      std::vector<int> cell_labels = {}) {
  if (cell_labels.empty()) cell_labels = layout.cell_labels();
  Tape tape;
  Var in = tape.constant(patches);
  Var x = model::extractor_forward(tape, ext, in, model::ExtractorOutput::features);
  const auto cells = layout.placed_cells();
  Var maps = ad::scatter_to_map(x, cells, layout.map_count(), layout.rows, layout.cols);
  Var logits = ad::map_to_cells(model::segmentation_forward(tape, seg, maps));
  Var loss = train::masked_loss(logits, cell_labels, layout.cell_mask(), reduction);
  tape.backward(loss);
  return collect(loss.value()[0], ext, seg);
}

// Loss and all gradients with every ignore cell given a random label.
inline bool ignore_labels_inert(std::uint64_t seed) {
  Toy toy = make_toy(seed);
  const Gradients base = monolithic_gradients(toy.ext, toy.seg, toy.patches, toy.layout);
  const auto mask = toy.layout.cell_mask();
  std::vector<int> labels = toy.layout.cell_labels();
  Rng rng(hash_combine(seed, 77));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (!mask[i]) labels[i] = static_cast<int>(rng.below(2));
  const Gradients perturbed =
      monolithic_gradients(toy.ext, toy.seg, toy.patches, toy.layout, train::LossReduction::mean, labels);
  const auto staged = train::e2e_gradients(toy.ext, toy.seg, toy.patches, toy.layout, 4);
  const Gradients staged_base = collect(staged.loss, toy.ext, toy.seg);
  return base.loss == perturbed.loss && base.extractor == perturbed.extractor &&
         base.segmentation == perturbed.segmentation && staged_base.segmentation == base.segmentation;
}

inline double max_rel(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& ref) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, ad::max_relative_error(a[i], ref[i]));
  return worst;
}

}  // namespace testing
