#pragma once

#include <cstddef>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "ldct/tensor.hpp"

namespace ldct::ad {

using NodeId = std::size_t;

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  ScalarMul,
  AddScalar,
  MatMul,
  Conv2d,
  Conv2dGradInput,
  Conv2dGradWeight,
  BiasAdd,
  ChannelSum,
  ChannelBroadcast,
  Relu,
  ReluGrad,
  LeakyRelu,
  LeakyReluGrad,
  Sum,
  Mean,
  BroadcastScalar,
  SumPerSample,
  BroadcastPerSample,
  Square,
  Sqrt,
  FrobeniusSq,
  Pad,
  Crop,
  Reshape,
  Log,
  Sigmoid,
  Clamp,
  ClampGrad,
  TileChannels,
  FoldChannels,
};

std::string_view op_name(OpKind op);

/// Per-op static arguments. Only the fields an op uses are meaningful.
struct OpAttrs {
  double scalar = 0.0;
  double scalar2 = 0.0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t count = 0;
  bool trans_a = false;
  bool trans_b = false;
  Shape shape;
};

template <class T>
struct Node {
  OpKind op = OpKind::Leaf;
  std::vector<NodeId> inputs;
  Tensor<T> value;
  OpAttrs attrs;
  bool requires_grad = false;
};

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape holds the node.
template <class T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, NodeId id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  NodeId id() const noexcept { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape<T>* tape_ = nullptr;
  NodeId id_ = 0;
};

/// Append-only record of a computation. Nodes are stored in creation order,
/// so every node's inputs precede it.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Leaf that never receives a gradient.
  Var<T> constant(Tensor<T> value);
  /// Leaf that is differentiated against (parameters, penalty interpolants).
  Var<T> variable(Tensor<T> value);

  Var<T> append(OpKind op, std::vector<NodeId> inputs, Tensor<T> value, OpAttrs attrs = {});

  const Node<T>& node(NodeId id) const;
  Var<T> var(NodeId id) { return Var<T>(this, id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool contains(NodeId id) const noexcept { return id < nodes_.size(); }

  /// When false, new nodes never require gradients regardless of inputs.
  bool recording() const noexcept { return recording_; }
  void set_recording(bool on) noexcept { recording_ = on; }

  /// Drops every node with id >= n.
  void truncate(std::size_t n);
  /// Frees a node's value; later reads of it are an error.
  void release_value(NodeId id);
  /// Moves a node's value out, leaving it released.
  Tensor<T> take_value(NodeId id);

  /// Recomputes every non-leaf node from its inputs and returns the number of
  /// nodes whose recomputed value differs from the stored one.
  std::size_t replay_mismatches() const;

 private:
  std::vector<Node<T>> nodes_;
  bool recording_ = true;
};

/// Disables gradient tracking on a tape for the guard's lifetime.
template <class T>
class NoGradScope {
 public:
  explicit NoGradScope(Tape<T>& tape) : tape_(tape), previous_(tape.recording()) { tape_.set_recording(false); }
  ~NoGradScope() { tape_.set_recording(previous_); }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>& tape_;
  bool previous_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->node(id_).value;
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->node(id_).requires_grad;
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace ldct::ad
