#pragma once

// Reverse-mode differentiation over layer-level operations.
//
// A Tape in `record` mode keeps every node it creates, in creation order, so
// the list is topologically sorted by construction. In `no_grad` mode nothing
// is recorded: a node lives only as long as some Var refers to it, which lets
// a forward pass drop intermediate activations as soon as they are consumed.
//
// Every node's value (plus any auxiliary buffers saved for backward, plus
// gradient buffers allocated during backward) is charged to the tape's
// MemoryMeter, giving a measured live/peak element count.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "wsiseg/tensor.hpp"

namespace wsiseg::ad {

class MemoryMeter {
 public:
  void add(std::size_t n);
  void release(std::size_t n);
  std::size_t live() const { return live_; }
  std::size_t peak() const { return peak_; }
  // Restarts the high-water mark at the current live count.
  void reset_peak() { peak_ = live_; }

 private:
  std::size_t live_ = 0;
  std::size_t peak_ = 0;
};

class Tape;
struct Node;

class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;
  // Gradient of the last backward pass; empty if the node received none.
  std::span<const double> grad() const;
  Tape& tape() const;
  bool valid() const { return node_ != nullptr; }

 private:
  friend class Tape;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

enum class GradMode { record, no_grad };

class Tape {
 public:
  using BackwardFn = std::function<void(Node&)>;

  explicit Tape(GradMode mode = GradMode::record);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  bool recording() const { return mode_ == GradMode::record; }

  // Leaf holding a copy of `value`. Constants never receive gradients.
  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad);
  // Leaf bound to an external parameter tensor. Its value is read in place
  // (and not charged to the meter); backward writes the gradient into
  // `param`'s grad buffer. The parameter must outlive the tape's nodes.
  Var parameter(Tensor& param);

  // Reverse pass from a scalar. Parameter gradients are overwritten.
  void backward(const Var& loss);
  // Reverse pass from a scalar. Parameter gradients are added to whatever
  // they already hold (missing buffers start at zero).
  void accumulate_grad(const Var& loss);

  // Drops every recorded node and resets the meter's peak.
  void clear();

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t live_elements() const { return meter_->live(); }
  std::size_t peak_live_elements() const { return meter_->peak(); }
  MemoryMeter& meter() { return *meter_; }

  // Used by ops: creates a node from a computed value. `backward` is kept
  // only when recording and at least one input requires a gradient.
  // `aux_elements` counts buffers the backward closure saves.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward,
             std::size_t aux_elements = 0);

 private:
  void run_backward(const Var& loss, bool accumulate);
  Var make_leaf(Tensor value, Tensor* param, bool requires_grad, bool charge);

  GradMode mode_;
  std::shared_ptr<MemoryMeter> meter_;
  std::vector<std::shared_ptr<Node>> nodes_;
};

struct Node {
  Tensor value;
  Tensor* param = nullptr;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  Tape::BackwardFn backward;
  bool requires_grad = false;
  std::size_t charged = 0;
  Tape* tape = nullptr;
  std::shared_ptr<MemoryMeter> meter;

  ~Node();

  const Tensor& val() const { return param ? *param : value; }
  // Gradient buffer of input `i`, allocated on first use; empty span if that
  // input does not require a gradient.
  std::span<double> input_grad(std::size_t i);
  const Tensor& input_value(std::size_t i) const { return inputs[i]->val(); }
  void ensure_grad();
};

}  // namespace wsiseg::ad
