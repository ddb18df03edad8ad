#include "ldct/tape.hpp"

#include <fmt/format.h>

#include <utility>

#include "ldct/ops.hpp"

namespace ldct::ad {

std::string_view op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "elementwise_mul";
    case OpKind::Div: return "div";
    case OpKind::ScalarMul: return "scalar_mul";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::MatMul: return "matmul";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Conv2dGradInput: return "conv2d_grad_input";
    case OpKind::Conv2dGradWeight: return "conv2d_grad_weight";
    case OpKind::BiasAdd: return "bias_add";
    case OpKind::ChannelSum: return "channel_sum";
    case OpKind::ChannelBroadcast: return "channel_broadcast";
    case OpKind::Relu: return "relu";
    case OpKind::ReluGrad: return "relu_grad";
    case OpKind::LeakyRelu: return "leaky_relu";
    case OpKind::LeakyReluGrad: return "leaky_relu_grad";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::BroadcastScalar: return "broadcast_scalar";
    case OpKind::SumPerSample: return "sum_per_sample";
    case OpKind::BroadcastPerSample: return "broadcast_per_sample";
    case OpKind::Square: return "square";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::FrobeniusSq: return "frobenius_sq";
    case OpKind::Pad: return "pad";
    case OpKind::Crop: return "crop";
    case OpKind::Reshape: return "reshape";
    case OpKind::Log: return "log";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Clamp: return "clamp";
    case OpKind::ClampGrad: return "clamp_grad";
    case OpKind::TileChannels: return "tile_channels";
    case OpKind::FoldChannels: return "fold_channels";
  }
  return "unknown";
}

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node<T> n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::variable(Tensor<T> value) {
  Node<T> n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
Var<T> Tape<T>::append(OpKind op, std::vector<NodeId> inputs, Tensor<T> value, OpAttrs attrs) {
  Node<T> n;
  n.op = op;
  n.requires_grad = false;
  if (recording_) {
    for (NodeId id : inputs) {
      if (node(id).requires_grad) {
        n.requires_grad = true;
        break;
      }
    }
  }
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.attrs = std::move(attrs);
  nodes_.push_back(std::move(n));
  return Var<T>(this, nodes_.size() - 1);
}

template <class T>
const Node<T>& Tape<T>::node(NodeId id) const {
  if (id >= nodes_.size()) {
    throw std::out_of_range(fmt::format("node {} is not on this tape ({} nodes)", id, nodes_.size()));
  }
  return nodes_[id];
}

template <class T>
void Tape<T>::truncate(std::size_t n) {
  if (n < nodes_.size()) nodes_.resize(n);
}

template <class T>
void Tape<T>::release_value(NodeId id) {
  if (id < nodes_.size()) nodes_[id].value = Tensor<T>();
}

template <class T>
Tensor<T> Tape<T>::take_value(NodeId id) {
  if (id >= nodes_.size()) throw std::out_of_range(fmt::format("node {} is not on this tape", id));
  return std::exchange(nodes_[id].value, Tensor<T>());
}

template <class T>
std::size_t Tape<T>::replay_mismatches() const {
  std::size_t mismatches = 0;
  for (const auto& n : nodes_) {
    if (n.op == OpKind::Leaf || n.value.empty()) continue;
    std::vector<const Tensor<T>*> in;
    bool released = false;
    for (NodeId id : n.inputs) {
      released = released || nodes_[id].value.empty();
      in.push_back(&nodes_[id].value);
    }
    if (released) continue;
    if (!(evaluate(n.op, in, n.attrs) == n.value)) ++mismatches;
  }
  return mismatches;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace ldct::ad
