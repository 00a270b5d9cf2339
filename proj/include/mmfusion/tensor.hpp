#pragma once

// Dense tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared Node. Ops executed while a Tape is
// active (see TapeScope) and that touch at least one requires_grad input
// append their output node to the tape together with a backward closure.
// backward() replays the tape in reverse. Without an active tape ops only
// compute values, which is what inference uses.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mmfusion/errors.hpp"

namespace mmf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  std::function<void(Node&)> backward_fn;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    if (shape_numel(shape) != data.size())
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  // Parameters are updated in place by optimizers and gradient checks.
  std::span<T> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->data[0];
  }

  T operator[](std::size_t i) const { return node_->data[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->data[r * node_->shape.back() + c]; }

  // Value copy detached from any tape.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

template <class T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::shared_ptr<Node<T>> node) { ops_.push_back(std::move(node)); }
  std::size_t size() const { return ops_.size(); }
  bool used() const { return used_; }

  // Reverse sweep. Each recorded op runs its backward rule at most once.
  void backward(const Tensor<T>& output) {
    if (!output.defined() || output.numel() != 1)
      throw ContractError("backward requires a scalar output, got " +
                          (output.defined() ? shape_str(output.shape()) : std::string("<null>")));
    if (!output.requires_grad())
      throw ContractError("backward output does not depend on any requires_grad tensor");
    if (used_) throw ContractError("tape has already been replayed");
    used_ = true;
    output.node()->ensure_grad()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      Node<T>& n = **it;
      if (!n.grad.empty() && n.backward_fn) n.backward_fn(n);
    }
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  std::vector<std::shared_ptr<Node<T>>> ops_;
  bool used_ = false;
};

/// Makes `tape` the recording target for ops on this thread until destroyed.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) { Tape<T>::active() = &tape; }
  ~TapeScope() { Tape<T>::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <class T>
void backward(const Tensor<T>& output, Tape<T>& tape) {
  tape.backward(output);
}

namespace detail {

// Builds an op result; hooks it onto the active tape when any input needs a
// gradient. `rule` receives the output node and the input nodes.
template <class T, class Rule>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, Rule&& rule) {
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return out;
  bool any = false;
  for (const auto* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  std::vector<std::shared_ptr<Node<T>>> parents;
  parents.reserve(inputs.size());
  for (const auto* in : inputs) parents.push_back(in->node());
  auto& node = *out.node();
  node.requires_grad = true;
  node.backward_fn = [parents = std::move(parents), rule = std::forward<Rule>(rule)](Node<T>& self) {
    rule(self, parents);
  };
  tape->record(out.node());
  return out;
}

// Same, for ops with a runtime-sized list of inputs.
template <class T, class Rule>
Tensor<T> make_result_n(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                        Rule&& rule) {
  Tensor<T> out(std::move(shape), std::move(data));
  Tape<T>* tape = Tape<T>::active();
  if (!tape) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  std::vector<std::shared_ptr<Node<T>>> parents;
  parents.reserve(inputs.size());
  for (const auto& in : inputs) parents.push_back(in.node());
  auto& node = *out.node();
  node.requires_grad = true;
  node.backward_fn = [parents = std::move(parents), rule = std::forward<Rule>(rule)](Node<T>& self) {
    rule(self, parents);
  };
  tape->record(out.node());
  return out;
}

}  // namespace detail
}  // namespace mmf
