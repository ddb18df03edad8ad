#include "ldct/autodiff.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

namespace ldct::ad {
namespace {

template <class T>
using MaybeVar = std::optional<Var<T>>;

// Adjoint of one node: given the gradient `g` of its output, returns the
// gradient contribution for each input flagged in `need`.
template <class T>
std::vector<MaybeVar<T>> vector_jacobian(Tape<T>& tape, NodeId id, Var<T> g, const std::vector<bool>& need) {
  const Node<T>& node = tape.node(id);
  const OpKind op = node.op;
  const OpAttrs at = node.attrs;
  const std::vector<NodeId> ins = node.inputs;
  const Var<T> y = tape.var(id);
  std::vector<MaybeVar<T>> out(ins.size());
  auto in = [&](std::size_t k) { return tape.var(ins[k]); };
  auto shape_of = [&](std::size_t k) { return tape.node(ins[k]).value.shape(); };

  switch (op) {
    case OpKind::Leaf:
      break;
    case OpKind::Add:
      if (need[0]) out[0] = g;
      if (need[1]) out[1] = g;
      break;
    case OpKind::Sub:
      if (need[0]) out[0] = g;
      if (need[1]) out[1] = scalar_mul(g, -1.0);
      break;
    case OpKind::Mul:
      if (need[0]) out[0] = mul(g, in(1));
      if (need[1]) out[1] = mul(g, in(0));
      break;
    case OpKind::Div:
      if (need[0]) out[0] = div(g, in(1));
      if (need[1]) out[1] = scalar_mul(div(mul(g, y), in(1)), -1.0);
      break;
    case OpKind::ScalarMul:
      if (need[0]) out[0] = scalar_mul(g, at.scalar);
      break;
    case OpKind::AddScalar:
      if (need[0]) out[0] = g;
      break;
    case OpKind::MatMul: {
      const bool ta = at.trans_a, tb = at.trans_b;
      if (need[0]) out[0] = ta ? matmul(in(1), g, tb, true) : matmul(g, in(1), false, !tb);
      if (need[1]) out[1] = tb ? matmul(g, in(0), true, ta) : matmul(in(0), g, !ta, false);
      break;
    }
    case OpKind::Conv2d:
      if (need[0]) out[0] = conv2d_grad_input(g, in(1), shape_of(0), at.stride, at.pad);
      if (need[1]) out[1] = conv2d_grad_weight(in(0), g, shape_of(1), at.stride, at.pad);
      if (ins.size() == 3 && need[2]) out[2] = channel_sum(g);
      break;
    case OpKind::Conv2dGradInput:
      // value = A(gy, w), bilinear with <h, A(gy, w)> = <conv(h, w), gy>.
      if (need[0]) out[0] = conv2d_padded(g, in(1), at.stride, at.pad);
      if (need[1]) out[1] = conv2d_grad_weight(g, in(0), shape_of(1), at.stride, at.pad);
      break;
    case OpKind::Conv2dGradWeight:
      // value = B(x, gy), bilinear with <H, B(x, gy)> = <conv(x, H), gy>.
      if (need[0]) out[0] = conv2d_grad_input(in(1), g, shape_of(0), at.stride, at.pad);
      if (need[1]) out[1] = conv2d_padded(in(0), g, at.stride, at.pad);
      break;
    case OpKind::BiasAdd:
      if (need[0]) out[0] = g;
      if (need[1]) out[1] = channel_sum(g);
      break;
    case OpKind::ChannelSum:
      if (need[0]) out[0] = channel_broadcast(g, shape_of(0));
      break;
    case OpKind::ChannelBroadcast:
      if (need[0]) out[0] = channel_sum(g);
      break;
    case OpKind::Relu:
      if (need[0]) out[0] = relu_grad(g, in(0));
      break;
    case OpKind::ReluGrad:
      // The mask is piecewise constant in x, so x receives no gradient.
      if (need[0]) out[0] = relu_grad(g, in(1));
      break;
    case OpKind::LeakyRelu:
      if (need[0]) out[0] = leaky_relu_grad(g, in(0), at.scalar);
      break;
    case OpKind::LeakyReluGrad:
      if (need[0]) out[0] = leaky_relu_grad(g, in(1), at.scalar);
      break;
    case OpKind::Clamp:
      if (need[0]) out[0] = clamp_grad(g, in(0), at.scalar, at.scalar2);
      break;
    case OpKind::ClampGrad:
      if (need[0]) out[0] = clamp_grad(g, in(1), at.scalar, at.scalar2);
      break;
    case OpKind::Sum:
      if (need[0]) out[0] = broadcast_scalar(g, shape_of(0));
      break;
    case OpKind::Mean: {
      if (need[0]) {
        const double n = static_cast<double>(element_count(shape_of(0)));
        out[0] = scalar_mul(broadcast_scalar(g, shape_of(0)), 1.0 / n);
      }
      break;
    }
    case OpKind::FrobeniusSq:
      if (need[0]) out[0] = mul(broadcast_scalar(g, shape_of(0)), scalar_mul(in(0), 2.0));
      break;
    case OpKind::BroadcastScalar:
      if (need[0]) {
        Var<T> s = sum(g);
        out[0] = shape_of(0) == s.shape() ? s : reshape(s, shape_of(0));
      }
      break;
    case OpKind::SumPerSample:
      if (need[0]) out[0] = broadcast_per_sample(g, shape_of(0));
      break;
    case OpKind::BroadcastPerSample:
      if (need[0]) out[0] = sum_per_sample(g);
      break;
    case OpKind::Square:
      if (need[0]) out[0] = mul(g, scalar_mul(in(0), 2.0));
      break;
    case OpKind::Sqrt:
      if (need[0]) out[0] = div(scalar_mul(g, 0.5), y);
      break;
    case OpKind::Log:
      if (need[0]) out[0] = div(g, in(0));
      break;
    case OpKind::Sigmoid:
      if (need[0]) out[0] = mul(g, mul(y, add_scalar(scalar_mul(y, -1.0), 1.0)));
      break;
    case OpKind::Pad:
      if (need[0]) out[0] = crop(g, at.pad);
      break;
    case OpKind::Crop:
      if (need[0]) out[0] = pad(g, at.pad);
      break;
    case OpKind::Reshape:
      if (need[0]) out[0] = reshape(g, shape_of(0));
      break;
    case OpKind::TileChannels:
      if (need[0]) out[0] = fold_channels(g, at.count);
      break;
    case OpKind::FoldChannels:
      if (need[0]) out[0] = tile_channels(g, at.count);
      break;
  }
  return out;
}

}  // namespace

template <class T>
std::vector<Var<T>> grad(Var<T> output, const std::vector<Var<T>>& wrt, bool create_graph) {
  Tape<T>& tape = output.tape();
  const NodeId root = output.id();
  if (!tape.contains(root)) throw std::out_of_range(fmt::format("output node {} is not on the tape", root));
  if (output.value().size() != 1) {
    throw ShapeError(fmt::format("backward needs a scalar output, got shape {}", to_string(output.shape())));
  }
  for (const auto& w : wrt) {
    if (&w.tape() != &tape || !tape.contains(w.id())) {
      throw std::out_of_range(fmt::format("gradient target node {} is not on the output's tape", w.id()));
    }
  }

  // Nodes on some path from a target to the root.
  std::vector<bool> needed(root + 1, false);
  std::vector<bool> is_target(root + 1, false);
  for (const auto& w : wrt) {
    if (w.id() <= root) is_target[w.id()] = needed[w.id()] = true;
  }
  for (NodeId id = 0; id <= root; ++id) {
    if (needed[id]) continue;
    for (NodeId in : tape.node(id).inputs) {
      if (needed[in]) {
        needed[id] = true;
        break;
      }
    }
  }

  const bool previous = tape.recording();
  tape.set_recording(create_graph);

  std::vector<std::optional<NodeId>> grads(root + 1);
  std::vector<std::size_t> refs;  // how many entries of `grads` point at a node
  auto ref = [&](NodeId gid, int delta) {
    if (gid >= refs.size()) refs.resize(gid + 1, 0);
    refs[gid] = static_cast<std::size_t>(static_cast<long>(refs[gid]) + delta);
    if (!create_graph && refs[gid] == 0) tape.release_value(gid);
  };

  if (needed[root]) {
    Var<T> seed = tape.constant(Tensor<T>(output.shape(), T(1)));
    grads[root] = seed.id();
    ref(seed.id(), +1);
  }

  for (NodeId id = root + 1; id-- > 0;) {
    if (!needed[id] || !grads[id]) continue;
    const Node<T>& node = tape.node(id);
    if (node.op == OpKind::Leaf) continue;
    std::vector<bool> need_in;
    for (NodeId in : node.inputs) need_in.push_back(needed[in]);
    const NodeId gid = *grads[id];
    auto contributions = vector_jacobian(tape, id, tape.var(gid), need_in);
    const auto inputs = tape.node(id).inputs;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
      if (!contributions[k]) continue;
      const NodeId in = inputs[k];
      if (grads[in]) {
        const NodeId old = *grads[in];
        Var<T> acc = add(tape.var(old), *contributions[k]);
        grads[in] = acc.id();
        ref(acc.id(), +1);
        ref(old, -1);
      } else {
        grads[in] = contributions[k]->id();
        ref(contributions[k]->id(), +1);
      }
    }
    if (!is_target[id]) {
      grads[id].reset();
      ref(gid, -1);
    }
  }
  tape.set_recording(previous);

  std::vector<Var<T>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.id() <= root && grads[w.id()]) {
      result.push_back(tape.var(*grads[w.id()]));
    } else {
      NoGradScope<T> scope(tape);
      result.push_back(tape.constant(Tensor<T>(w.shape())));
    }
  }
  return result;
}

template <class T>
std::vector<Tensor<T>> gradients(Var<T> output, const std::vector<Var<T>>& wrt) {
  Tape<T>& tape = output.tape();
  const std::size_t mark = tape.size();
  auto vars = grad(output, wrt, false);
  std::vector<Tensor<T>> out;
  out.reserve(vars.size());
  std::map<NodeId, std::size_t> taken;
  for (const auto& v : vars) {
    if (auto it = taken.find(v.id()); it != taken.end()) {
      out.push_back(out[it->second]);
    } else {
      taken.emplace(v.id(), out.size());
      out.push_back(v.id() >= mark ? tape.take_value(v.id()) : v.value());
    }
  }
  tape.truncate(mark);
  return out;
}

template <class T>
std::map<NodeId, Tensor<T>> backward(Tape<T>& tape, NodeId output) {
  if (!tape.contains(output)) throw std::out_of_range(fmt::format("output node {} is not on the tape", output));
  std::vector<Var<T>> leaves;
  for (NodeId id = 0; id <= output; ++id) {
    const auto& n = tape.node(id);
    if (n.op == OpKind::Leaf && n.requires_grad) leaves.push_back(tape.var(id));
  }
  auto grads = gradients(tape.var(output), leaves);
  std::map<NodeId, Tensor<T>> out;
  for (std::size_t i = 0; i < leaves.size(); ++i) out.emplace(leaves[i].id(), std::move(grads[i]));
  return out;
}

template <class T>
GradCheckResult check_gradients(const TapeFunction<T>& f, const std::vector<Tensor<T>>& point,
                                const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("gradient check step must be positive");

  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& p : point) leaves.push_back(tape.variable(p));
    Var<T> out = f(tape, leaves);
    if (out.value().size() != 1) {
      throw ShapeError(fmt::format("gradient check needs a scalar function, got {}", to_string(out.shape())));
    }
    analytic = gradients(out, leaves);
  }

  auto evaluate_at = [&](const std::vector<Tensor<T>>& at) {
    Tape<T> tape;
    std::vector<Var<T>> leaves;
    for (const auto& p : at) leaves.push_back(tape.variable(p));
    return static_cast<double>(f(tape, leaves).value().item());
  };

  double scale = 0.0;
  for (std::size_t l = 0; l < analytic.size(); ++l) {
    for (std::size_t i = 0; i < analytic[l].size(); ++i) {
      const double a = analytic[l][i];
      if (!std::isfinite(a)) {
        throw NonFiniteError(fmt::format("non-finite analytic gradient at leaf {} component {}", l, i));
      }
      scale = std::max(scale, std::abs(a));
    }
  }
  const double floor = std::max(options.abs_floor, options.rel_floor * scale);

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  std::vector<Tensor<T>> probe = point;
  for (std::size_t l = 0; l < point.size(); ++l) {
    std::vector<std::size_t> idx(point[l].size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_components && idx.size() > options.max_components) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(options.max_components);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const T original = probe[l][i];
      probe[l][i] = static_cast<T>(original + options.step);
      const double plus = evaluate_at(probe);
      probe[l][i] = static_cast<T>(original - options.step);
      const double minus = evaluate_at(probe);
      probe[l][i] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw NonFiniteError(fmt::format("non-finite function value perturbing leaf {} component {}", l, i));
      }
      // Divide by the step actually taken after rounding to T.
      const double h = (static_cast<double>(static_cast<T>(original + options.step)) -
                        static_cast<double>(static_cast<T>(original - options.step)));
      const double numeric = (plus - minus) / h;
      const double a = analytic[l][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_leaf = l;
        result.worst_component = i;
      }
    }
  }
  return result;
}

#define LDCT_INSTANTIATE_AUTODIFF(T)                                                                    \
  template std::vector<Var<T>> grad<T>(Var<T>, const std::vector<Var<T>>&, bool);                      \
  template std::vector<Tensor<T>> gradients<T>(Var<T>, const std::vector<Var<T>>&);                    \
  template std::map<NodeId, Tensor<T>> backward<T>(Tape<T>&, NodeId);                                  \
  template GradCheckResult check_gradients<T>(const TapeFunction<T>&, const std::vector<Tensor<T>>&,     \
                                              const GradCheckOptions&);

LDCT_INSTANTIATE_AUTODIFF(float)
LDCT_INSTANTIATE_AUTODIFF(double)

}  // namespace ldct::ad
