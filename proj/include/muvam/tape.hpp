#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "muvam/errors.hpp"
#include "muvam/tensor.hpp"

namespace muvam {

template <typename T>
class Tape;

// Handle to a value recorded on a tape. Cheap to copy; valid while the tape
// lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape; }
  std::size_t numel() const { return value().numel(); }
  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode recording. Nodes are appended in evaluation order, so every
// node's inputs precede it and a single reverse sweep visits each node once.
//
// Parameters are bound by address: the tensor must outlive the tape, and its
// grad field is overwritten by backward().
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) {
    return push(std::move(value), {}, nullptr, false);
  }

  Var<T> parameter(Tensor<T>& param) {
    if (auto it = bound_index_.find(&param); it != bound_index_.end()) {
      return Var<T>(this, it->second);
    }
    Tensor<T> copy;
    copy.shape = param.shape;
    copy.data = param.data;
    const bool track = param.requires_grad;
    Var<T> v = push(std::move(copy), {}, nullptr, track);
    bound_index_.emplace(&param, v.id());
    bound_.emplace_back(&param, v.id());
    return v;
  }

  // Generic recording entry point used by every op. The backward function is
  // dropped when no input is tracked.
  Var<T> record(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward) {
    bool track = false;
    for (std::size_t in : inputs) track = track || nodes_.at(in).tracked;
    return push(std::move(value), std::move(inputs), track ? std::move(backward) : nullptr, track);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool tracked(std::size_t id) const { return nodes_.at(id).tracked; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient buffer of a node, allocated (zeroed) on first access.
  std::vector<T>& grad(std::size_t id) {
    auto& node = nodes_.at(id);
    if (node.grad.empty() && node.value.numel() > 0) node.grad.assign(node.value.numel(), T{0});
    return node.grad;
  }

  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  void backward(const Var<T>& loss) {
    if (&loss.tape() != this) throw UsageError("loss was recorded on a different tape");
    if (loss.numel() != 1) {
      throw UsageError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
    }
    for (auto& node : nodes_) node.grad.clear();
    grad(loss.id())[0] = T{1};
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (!node.backward || node.grad.empty()) continue;
      node.backward(*this, i);
    }
    for (auto& [param, id] : bound_) {
      if (!param->requires_grad) continue;
      if (nodes_[id].grad.empty()) {
        param->grad.emplace(param->numel(), T{0});
      } else {
        param->grad = nodes_[id].grad;
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool tracked = false;
    std::vector<T> grad;
  };

  Var<T> push(Tensor<T> value, std::vector<std::size_t> inputs, BackwardFn backward, bool tracked) {
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(backward), tracked, {}});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::pair<Tensor<T>*, std::size_t>> bound_;
  std::unordered_map<const Tensor<T>*, std::size_t> bound_index_;
};

}  // namespace muvam
