#include "wsiseg/tape.hpp"

#include <cassert>
#include <stdexcept>

namespace wsiseg::ad {

void MemoryMeter::add(std::size_t n) {
  live_ += n;
  if (live_ > peak_) peak_ = live_;
}

void MemoryMeter::release(std::size_t n) { live_ -= n; }

const Tensor& Var::value() const {
  if (!node_) throw std::logic_error("use of empty Var");
  return node_->val();
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const double> Var::grad() const {
  if (!node_) throw std::logic_error("use of empty Var");
  return node_->grad;
}

Tape& Var::tape() const {
  if (!node_) throw std::logic_error("use of empty Var");
  return *node_->tape;
}

Node::~Node() {
  if (meter) meter->release(charged);
}

void Node::ensure_grad() {
  if (grad.empty()) {
    grad.assign(val().size(), 0.0);
    charged += grad.size();
    meter->add(grad.size());
  }
}

std::span<double> Node::input_grad(std::size_t i) {
  Node& in = *inputs[i];
  if (!in.requires_grad) return {};
  in.ensure_grad();
  return in.grad;
}

Tape::Tape(GradMode mode) : mode_(mode), meter_(std::make_shared<MemoryMeter>()) {}

Tape::~Tape() = default;

Var Tape::make_leaf(Tensor value, Tensor* param, bool requires_grad, bool charge) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->param = param;
  node->requires_grad = requires_grad && recording();
  node->tape = this;
  node->meter = meter_;
  if (charge) {
    node->charged = node->value.size();
    meter_->add(node->charged);
  }
  if (recording()) nodes_.push_back(node);
  return Var(std::move(node));
}

Var Tape::constant(Tensor value) { return make_leaf(std::move(value), nullptr, false, true); }

Var Tape::input(Tensor value, bool requires_grad) {
  return make_leaf(std::move(value), nullptr, requires_grad, true);
}

Var Tape::parameter(Tensor& param) { return make_leaf(Tensor(), &param, true, false); }

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward,
                 std::size_t aux_elements) {
#ifndef NDEBUG
  for (const auto& in : inputs)
    if (in.node_->tape != this) throw std::logic_error("mixing vars from different tapes");
  bool finite_in = true;
  for (const auto& in : inputs) finite_in = finite_in && in.value().all_finite();
  assert(!finite_in || value.all_finite());
#endif
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->tape = this;
  node->meter = meter_;
  node->charged = node->value.size() + aux_elements;
  meter_->add(node->charged);
  if (recording()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.node_->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->backward = std::move(backward);
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node_);
    }
    nodes_.push_back(node);
  }
  return Var(std::move(node));
}

void Tape::run_backward(const Var& loss, bool accumulate) {
  if (!recording()) throw std::logic_error("backward on a no_grad tape");
  if (!loss.valid() || loss.node_->tape != this)
    throw std::invalid_argument("loss is not on this tape");
  if (loss.size() != 1)
    throw std::invalid_argument("loss must be scalar, got shape " + shape_string(loss.shape()));

  for (auto& node : nodes_) {
    node->charged -= node->grad.size();
    meter_->release(node->grad.size());
    node->grad.clear();
    node->grad.shrink_to_fit();
  }
  Node& root = *loss.node_;
  if (!root.requires_grad) return;
  root.ensure_grad();
  root.grad[0] = 1.0;

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = **it;
    if (node.backward && !node.grad.empty()) node.backward(node);
  }
  // A parameter bound more than once receives the sum over its leaves.
  if (!accumulate)
    for (auto& node : nodes_)
      if (node->param) node->param->zero_grad();
  for (auto& node : nodes_) {
    if (!node->param) continue;
    if (node->grad.empty()) node->ensure_grad();
    node->param->add_grad(node->grad);
  }
}

void Tape::backward(const Var& loss) { run_backward(loss, false); }

void Tape::accumulate_grad(const Var& loss) { run_backward(loss, true); }

void Tape::clear() {
  nodes_.clear();
  meter_->reset_peak();
}

}  // namespace wsiseg::ad
