#pragma once

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spjscc/numcore/tensor.hpp"

namespace spjscc::numcore {

enum class OpKind {
  kLeaf,
  kConv2d,
  kConvTranspose2d,
  kDense,
  kRelu,
  kPrelu,
  kSigmoid,
  kSoftmax,
  kMeanPool,
  kGlobalMeanPool,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kConcat,
  kSlice,
  kReshape,
  kSum,
  kMean,
  kCrossEntropy,
  kCustom,
};

std::string_view op_name(OpKind kind);

// Handle to a value recorded on a specific tape.
struct NodeId {
  std::uint64_t tape = 0;
  std::size_t index = 0;
  friend bool operator==(const NodeId&, const NodeId&) = default;
};

template <typename T>
class Gradients;

// Records forward values in topological order and replays them in reverse
// for gradients. Confined to one thread.
template <typename T>
class Tape {
 public:
  // Receives the op's own forward output and its incoming gradient.
  // grad_inputs[i] is null when input i does not require a gradient;
  // otherwise it is a zero-initialised or partially accumulated tensor of the
  // input's shape that the function must add into.
  using BackwardFn =
      std::function<void(const Tape& tape, const Tensor<T>& output, const Tensor<T>& grad_out,
                         std::span<Tensor<T>* const> grad_inputs)>;

  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  NodeId variable(Tensor<T> value, std::string name = {}) {
    return push(OpKind::kLeaf, std::move(name), std::move(value), {}, {}, true);
  }

  NodeId constant(Tensor<T> value, std::string name = {}) {
    return push(OpKind::kLeaf, std::move(name), std::move(value), {}, {}, false);
  }

  // Appends an op output. Rejects non-finite values.
  NodeId record(OpKind kind, std::string label, Tensor<T> value,
                std::vector<NodeId> inputs, BackwardFn backward) {
    for (const NodeId& in : inputs) check(in);
    if (!value.all_finite()) {
      throw NonFiniteError(std::string(op_name(kind)) +
                           (label.empty() ? "" : " (" + label + ")") +
                           ": non-finite output");
    }
    bool needs_grad = false;
    for (const NodeId& in : inputs) needs_grad = needs_grad || nodes_[in.index].requires_grad;
    return push(kind, std::move(label), std::move(value), std::move(inputs),
                std::move(backward), needs_grad);
  }

  const Tensor<T>& value(NodeId id) const { return nodes_[check(id)].value; }
  const Shape& shape(NodeId id) const { return value(id).shape(); }
  bool requires_grad(NodeId id) const { return nodes_[check(id)].requires_grad; }
  OpKind kind(NodeId id) const { return nodes_[check(id)].kind; }
  const std::string& label(NodeId id) const { return nodes_[check(id)].label; }
  const std::vector<NodeId>& inputs(NodeId id) const { return nodes_[check(id)].inputs; }
  std::size_t size() const { return nodes_.size(); }

  bool contains(NodeId id) const { return id.tape == id_ && id.index < nodes_.size(); }

  std::size_t check(NodeId id) const {
    if (!contains(id)) {
      throw std::invalid_argument("node " + std::to_string(id.index) +
                                  " is not on this tape");
    }
    return id.index;
  }

  // Reverse pass from `output`. A scalar output may omit the seed (taken as
  // 1); otherwise the seed must match the output's shape.
  Gradients<T> backward(NodeId output, std::optional<Tensor<T>> seed = std::nullopt) const;

 private:
  struct Node {
    OpKind kind;
    std::string label;
    Tensor<T> value;
    std::vector<NodeId> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  static std::uint64_t next_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  NodeId push(OpKind kind, std::string label, Tensor<T> value,
              std::vector<NodeId> inputs, BackwardFn backward, bool requires_grad) {
    nodes_.push_back(Node{kind, std::move(label), std::move(value), std::move(inputs),
                          std::move(backward), requires_grad});
    return NodeId{id_, nodes_.size() - 1};
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;

  friend class Gradients<T>;
};

// Result of one reverse pass. Nodes unreachable from the output report zero.
template <typename T>
class Gradients {
 public:
  const Tensor<T>& operator[](NodeId id) const {
    const std::size_t i = tape_->check(id);
    if (grads_[i].empty()) {
      zeros_.emplace_back(tape_->value(id).shape());
      return zeros_.back();
    }
    return grads_[i];
  }

  bool reached(NodeId id) const { return !grads_[tape_->check(id)].empty(); }

 private:
  friend class Tape<T>;
  Gradients(const Tape<T>* tape, std::vector<Tensor<T>> grads)
      : tape_(tape), grads_(std::move(grads)) {}

  const Tape<T>* tape_;
  std::vector<Tensor<T>> grads_;
  mutable std::deque<Tensor<T>> zeros_;
};

template <typename T>
Gradients<T> Tape<T>::backward(NodeId output, std::optional<Tensor<T>> seed) const {
  const std::size_t out = check(output);
  const Tensor<T>& out_value = nodes_[out].value;
  if (!seed) {
    if (out_value.size() != 1) {
      throw ShapeError("backward: output " + to_string(out_value.shape()) +
                       " is not scalar; a seed gradient is required");
    }
    seed = Tensor<T>(out_value.shape(), T{1});
  } else if (seed->shape() != out_value.shape()) {
    throw ShapeError("backward: seed " + to_string(seed->shape()) +
                     " does not match output " + to_string(out_value.shape()));
  }

  std::vector<Tensor<T>> grads(nodes_.size());
  grads[out] = std::move(*seed);
  std::vector<Tensor<T>*> slots;
  for (std::size_t i = out + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (grads[i].empty() || !node.backward || !node.requires_grad) continue;
    slots.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      const std::size_t j = node.inputs[k].index;
      if (!nodes_[j].requires_grad) continue;
      if (grads[j].empty()) grads[j] = Tensor<T>(nodes_[j].value.shape());
      slots[k] = &grads[j];
    }
    node.backward(*this, node.value, grads[i], slots);
  }
  return Gradients<T>(this, std::move(grads));
}

}  // namespace spjscc::numcore
