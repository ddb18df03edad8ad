#include "ldct/ops.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "conv.hpp"

namespace ldct::ad {
namespace {

template <class T>
using Inputs = std::vector<const Tensor<T>*>;

void require_arity(OpKind op, std::size_t got, std::size_t want) {
  if (got != want) {
    throw std::invalid_argument(fmt::format("{}: expected {} inputs, got {}", op_name(op), want, got));
  }
}

void require_same(OpKind op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(fmt::format("{}: shapes {} and {} differ", op_name(op), to_string(a), to_string(b)));
}

void require_rank(OpKind op, const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(fmt::format("{}: {} must have rank {}, got {}", op_name(op), what, rank, to_string(s)));
  }
}

template <class T, class F>
Tensor<T> unary(const Tensor<T>& a, F f) {
  Tensor<T> out(a.shape());
  const T* src = a.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class T, class F>
Tensor<T> binary(OpKind op, const Tensor<T>& a, const Tensor<T>& b, F f) {
  require_same(op, a.shape(), b.shape());
  Tensor<T> out(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* dst = out.data();
  for (std::size_t i = 0; i < a.size(); ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

detail::ConvGeometry conv_geometry(OpKind op, const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
  require_rank(op, x, 4, "input");
  require_rank(op, w, 4, "kernel");
  if (x[1] != w[1]) {
    throw ShapeError(fmt::format("{}: input has {} channels but kernel {} expects {}", op_name(op), x[1],
                                 to_string(w), w[1]));
  }
  if (stride == 0) throw ShapeError(fmt::format("{}: stride must be >= 1", op_name(op)));
  if (x[2] + 2 * pad < w[2] || x[3] + 2 * pad < w[3]) {
    throw ShapeError(fmt::format("{}: kernel {} larger than padded input {}", op_name(op), to_string(w), to_string(x)));
  }
  detail::ConvGeometry g;
  g.batch = x[0];
  g.in_ch = x[1];
  g.in_h = x[2];
  g.in_w = x[3];
  g.out_ch = w[0];
  g.kh = w[2];
  g.kw = w[3];
  g.stride = stride;
  g.pad = pad;
  g.out_h = conv_output_size(x[2], w[2], stride, pad);
  g.out_w = conv_output_size(x[3], w[3], stride, pad);
  return g;
}

template <class T>
double accumulate(const Tensor<T>& a) {
  double s = 0.0;
  for (T v : a.values()) s += static_cast<double>(v);
  return s;
}

template <class T>
Tensor<T> matmul_forward(const Tensor<T>& a, const Tensor<T>& b, const OpAttrs& at) {
  require_rank(OpKind::MatMul, a.shape(), 2, "left operand");
  require_rank(OpKind::MatMul, b.shape(), 2, "right operand");
  const std::size_t m = at.trans_a ? a.dim(1) : a.dim(0);
  const std::size_t k = at.trans_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = at.trans_b ? b.dim(1) : b.dim(0);
  const std::size_t n = at.trans_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw ShapeError(fmt::format("matmul: inner dimensions differ ({} vs {}) for {}{} x {}{}", k, kb,
                                 to_string(a.shape()), at.trans_a ? "^T" : "", to_string(b.shape()),
                                 at.trans_b ? "^T" : ""));
  }
  Tensor<T> out(Shape{m, n});
  detail::gemm(a.data(), b.data(), out.data(), m, n, k, at.trans_a, at.trans_b);
  return out;
}

template <class T>
Tensor<T> pad_forward(const Tensor<T>& x, std::size_t p) {
  require_rank(OpKind::Pad, x.shape(), 4, "input");
  const auto& s = x.shape();
  Tensor<T> out(Shape{s[0], s[1], s[2] + 2 * p, s[3] + 2 * p});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t h = 0; h < s[2]; ++h)
        std::copy_n(&x.at(n, c, h, 0), s[3], &out.at(n, c, h + p, p));
  return out;
}

template <class T>
Tensor<T> crop_forward(const Tensor<T>& x, std::size_t p) {
  require_rank(OpKind::Crop, x.shape(), 4, "input");
  const auto& s = x.shape();
  if (s[2] <= 2 * p || s[3] <= 2 * p) {
    throw ShapeError(fmt::format("crop: cannot remove {} pixels per side from {}", p, to_string(s)));
  }
  Tensor<T> out(Shape{s[0], s[1], s[2] - 2 * p, s[3] - 2 * p});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t h = 0; h < s[2] - 2 * p; ++h)
        std::copy_n(&x.at(n, c, h + p, p), s[3] - 2 * p, &out.at(n, c, h, 0));
  return out;
}

template <class T>
Tensor<T> tile_forward(const Tensor<T>& x, std::size_t k) {
  require_rank(OpKind::TileChannels, x.shape(), 4, "input");
  const auto& s = x.shape();
  const std::size_t plane = s[2] * s[3];
  Tensor<T> out(Shape{s[0], s[1] * k, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1]; ++c)
      for (std::size_t r = 0; r < k; ++r)
        std::copy_n(&x.at(n, c, 0, 0), plane, &out.at(n, c * k + r, 0, 0));
  return out;
}

template <class T>
Tensor<T> fold_forward(const Tensor<T>& x, std::size_t k) {
  require_rank(OpKind::FoldChannels, x.shape(), 4, "input");
  const auto& s = x.shape();
  if (k == 0 || s[1] % k != 0) {
    throw ShapeError(fmt::format("fold_channels: {} channels not divisible by {}", s[1], k));
  }
  const std::size_t plane = s[2] * s[3];
  Tensor<T> out(Shape{s[0], s[1] / k, s[2], s[3]});
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t c = 0; c < s[1] / k; ++c) {
      T* dst = &out.at(n, c, 0, 0);
      for (std::size_t r = 0; r < k; ++r) {
        const T* src = &x.at(n, c * k + r, 0, 0);
        for (std::size_t i = 0; i < plane; ++i) dst[i] += src[i];
      }
    }
  return out;
}

// Iterates (outer, channel, inner) for a tensor whose dimension 1 is the channel.
struct ChannelLayout {
  std::size_t outer, channels, inner;
  explicit ChannelLayout(const Shape& s) : outer(s[0]), channels(s[1]), inner(element_count(s) / (s[0] * s[1])) {}
};

}  // namespace

std::size_t padding_amount(Padding padding, std::size_t kernel) {
  if (padding == Padding::Valid) return 0;
  if (kernel % 2 == 0) throw ShapeError(fmt::format("same padding needs an odd kernel, got {}", kernel));
  return kernel / 2;
}

std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t pad) {
  return (input + 2 * pad - kernel) / stride + 1;
}

template <class T>
Tensor<T> evaluate(OpKind op, const Inputs<T>& in, const OpAttrs& at) {
  switch (op) {
    case OpKind::Leaf:
      throw std::invalid_argument("leaf nodes are not evaluated");
    case OpKind::Add:
      require_arity(op, in.size(), 2);
      return binary(op, *in[0], *in[1], [](T a, T b) { return a + b; });
    case OpKind::Sub:
      require_arity(op, in.size(), 2);
      return binary(op, *in[0], *in[1], [](T a, T b) { return a - b; });
    case OpKind::Mul:
      require_arity(op, in.size(), 2);
      return binary(op, *in[0], *in[1], [](T a, T b) { return a * b; });
    case OpKind::Div:
      require_arity(op, in.size(), 2);
      return binary(op, *in[0], *in[1], [](T a, T b) { return a / b; });
    case OpKind::ScalarMul: {
      require_arity(op, in.size(), 1);
      const T c = static_cast<T>(at.scalar);
      return unary(*in[0], [c](T a) { return a * c; });
    }
    case OpKind::AddScalar: {
      require_arity(op, in.size(), 1);
      const T c = static_cast<T>(at.scalar);
      return unary(*in[0], [c](T a) { return a + c; });
    }
    case OpKind::MatMul:
      require_arity(op, in.size(), 2);
      return matmul_forward(*in[0], *in[1], at);
    case OpKind::Conv2d: {
      if (in.size() != 2 && in.size() != 3) require_arity(op, in.size(), 2);
      auto g = conv_geometry(op, in[0]->shape(), in[1]->shape(), at.stride, at.pad);
      const T* bias = nullptr;
      if (in.size() == 3) {
        if (in[2]->shape() != Shape{g.out_ch}) {
          throw ShapeError(fmt::format("conv2d: bias {} does not match {} output channels", to_string(in[2]->shape()),
                                       g.out_ch));
        }
        bias = in[2]->data();
      }
      Tensor<T> out(Shape{g.batch, g.out_ch, g.out_h, g.out_w});
      detail::conv_forward(g, in[0]->data(), in[1]->data(), bias, out.data());
      return out;
    }
    case OpKind::Conv2dGradInput: {
      require_arity(op, in.size(), 2);
      auto g = conv_geometry(op, at.shape, in[1]->shape(), at.stride, at.pad);
      require_same(op, in[0]->shape(), Shape{g.batch, g.out_ch, g.out_h, g.out_w});
      Tensor<T> out(at.shape);
      detail::conv_backward_input(g, in[0]->data(), in[1]->data(), out.data());
      return out;
    }
    case OpKind::Conv2dGradWeight: {
      require_arity(op, in.size(), 2);
      auto g = conv_geometry(op, in[0]->shape(), at.shape, at.stride, at.pad);
      require_same(op, in[1]->shape(), Shape{g.batch, g.out_ch, g.out_h, g.out_w});
      Tensor<T> out(at.shape);
      detail::conv_backward_weight(g, in[0]->data(), in[1]->data(), out.data());
      return out;
    }
    case OpKind::BiasAdd: {
      require_arity(op, in.size(), 2);
      const auto& x = *in[0];
      if (x.rank() < 2 || in[1]->shape() != Shape{x.dim(1)}) {
        throw ShapeError(fmt::format("bias_add: bias {} does not match input {}", to_string(in[1]->shape()),
                                     to_string(x.shape())));
      }
      ChannelLayout l(x.shape());
      Tensor<T> out = x;
      T* dst = out.data();
      const T* b = in[1]->data();
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t c = 0; c < l.channels; ++c)
          for (std::size_t i = 0; i < l.inner; ++i) dst[(o * l.channels + c) * l.inner + i] += b[c];
      return out;
    }
    case OpKind::ChannelSum: {
      require_arity(op, in.size(), 1);
      const auto& x = *in[0];
      if (x.rank() < 2) throw ShapeError(fmt::format("channel_sum: input {} has no channel axis", to_string(x.shape())));
      ChannelLayout l(x.shape());
      std::vector<double> acc(l.channels, 0.0);
      const T* src = x.data();
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t c = 0; c < l.channels; ++c)
          for (std::size_t i = 0; i < l.inner; ++i) acc[c] += src[(o * l.channels + c) * l.inner + i];
      Tensor<T> out(Shape{l.channels});
      for (std::size_t c = 0; c < l.channels; ++c) out[c] = static_cast<T>(acc[c]);
      return out;
    }
    case OpKind::ChannelBroadcast: {
      require_arity(op, in.size(), 1);
      if (at.shape.size() < 2 || in[0]->shape() != Shape{at.shape[1]}) {
        throw ShapeError(fmt::format("channel_broadcast: {} cannot broadcast to {}", to_string(in[0]->shape()),
                                     to_string(at.shape)));
      }
      ChannelLayout l(at.shape);
      Tensor<T> out(at.shape);
      T* dst = out.data();
      for (std::size_t o = 0; o < l.outer; ++o)
        for (std::size_t c = 0; c < l.channels; ++c)
          std::fill_n(dst + (o * l.channels + c) * l.inner, l.inner, (*in[0])[c]);
      return out;
    }
    case OpKind::Relu:
      require_arity(op, in.size(), 1);
      return unary(*in[0], [](T a) { return a > T(0) ? a : T(0); });
    case OpKind::ReluGrad:
      require_arity(op, in.size(), 2);
      return binary(op, *in[0], *in[1], [](T g, T x) { return x > T(0) ? g : T(0); });
    case OpKind::LeakyRelu: {
      require_arity(op, in.size(), 1);
      const T s = static_cast<T>(at.scalar);
      return unary(*in[0], [s](T a) { return a > T(0) ? a : s * a; });
    }
    case OpKind::LeakyReluGrad: {
      require_arity(op, in.size(), 2);
      const T s = static_cast<T>(at.scalar);
      return binary(op, *in[0], *in[1], [s](T g, T x) { return x > T(0) ? g : s * g; });
    }
    case OpKind::Sum:
      require_arity(op, in.size(), 1);
      return Tensor<T>::scalar(static_cast<T>(accumulate(*in[0])));
    case OpKind::Mean:
      require_arity(op, in.size(), 1);
      return Tensor<T>::scalar(static_cast<T>(accumulate(*in[0]) / static_cast<double>(in[0]->size())));
    case OpKind::FrobeniusSq: {
      require_arity(op, in.size(), 1);
      double s = 0.0;
      for (T v : in[0]->values()) s += static_cast<double>(v) * static_cast<double>(v);
      return Tensor<T>::scalar(static_cast<T>(s));
    }
    case OpKind::BroadcastScalar:
      require_arity(op, in.size(), 1);
      if (in[0]->size() != 1) {
        throw ShapeError(fmt::format("broadcast_scalar: operand {} is not a scalar", to_string(in[0]->shape())));
      }
      return Tensor<T>(at.shape, (*in[0])[0]);
    case OpKind::SumPerSample: {
      require_arity(op, in.size(), 1);
      const auto& x = *in[0];
      const std::size_t b = x.dim(0);
      const std::size_t inner = x.size() / b;
      Tensor<T> out(Shape{b});
      for (std::size_t n = 0; n < b; ++n) {
        double s = 0.0;
        for (std::size_t i = 0; i < inner; ++i) s += x[n * inner + i];
        out[n] = static_cast<T>(s);
      }
      return out;
    }
    case OpKind::BroadcastPerSample: {
      require_arity(op, in.size(), 1);
      if (in[0]->shape() != Shape{at.shape.at(0)}) {
        throw ShapeError(fmt::format("broadcast_per_sample: {} cannot broadcast to {}", to_string(in[0]->shape()),
                                     to_string(at.shape)));
      }
      Tensor<T> out(at.shape);
      const std::size_t inner = out.size() / at.shape[0];
      for (std::size_t n = 0; n < at.shape[0]; ++n) std::fill_n(out.data() + n * inner, inner, (*in[0])[n]);
      return out;
    }
    case OpKind::Square:
      require_arity(op, in.size(), 1);
      return unary(*in[0], [](T a) { return a * a; });
    case OpKind::Sqrt:
      require_arity(op, in.size(), 1);
      return unary(*in[0], [](T a) { return std::sqrt(a); });
    case OpKind::Log:
      require_arity(op, in.size(), 1);
      return unary(*in[0], [](T a) { return std::log(a); });
    case OpKind::Sigmoid:
      require_arity(op, in.size(), 1);
      return unary(*in[0], [](T a) { return T(1) / (T(1) + std::exp(-a)); });
    case OpKind::Clamp: {
      require_arity(op, in.size(), 1);
      const T lo = static_cast<T>(at.scalar), hi = static_cast<T>(at.scalar2);
      return unary(*in[0], [lo, hi](T a) { return std::clamp(a, lo, hi); });
    }
    case OpKind::ClampGrad: {
      require_arity(op, in.size(), 2);
      const T lo = static_cast<T>(at.scalar), hi = static_cast<T>(at.scalar2);
      return binary(op, *in[0], *in[1], [lo, hi](T g, T x) { return (x >= lo && x <= hi) ? g : T(0); });
    }
    case OpKind::Pad:
      require_arity(op, in.size(), 1);
      return pad_forward(*in[0], at.pad);
    case OpKind::Crop:
      require_arity(op, in.size(), 1);
      return crop_forward(*in[0], at.pad);
    case OpKind::Reshape:
      require_arity(op, in.size(), 1);
      return in[0]->reshaped(at.shape);
    case OpKind::TileChannels:
      require_arity(op, in.size(), 1);
      return tile_forward(*in[0], at.count);
    case OpKind::FoldChannels:
      require_arity(op, in.size(), 1);
      return fold_forward(*in[0], at.count);
  }
  throw std::logic_error("unhandled op");
}

namespace {

template <class T>
Var<T> record(OpKind op, std::initializer_list<Var<T>> operands, OpAttrs attrs = {}) {
  Tape<T>& tape = operands.begin()->tape();
  Inputs<T> values;
  std::vector<NodeId> ids;
  for (const auto& v : operands) {
    if (&v.tape() != &tape) throw std::invalid_argument(fmt::format("{}: operands live on different tapes", op_name(op)));
    values.push_back(&v.value());
    ids.push_back(v.id());
  }
  Tensor<T> out = evaluate(op, values, attrs);
  return tape.append(op, std::move(ids), std::move(out), std::move(attrs));
}

OpAttrs scalar_attr(double c) {
  OpAttrs a;
  a.scalar = c;
  return a;
}

OpAttrs shape_attr(const Shape& s) {
  OpAttrs a;
  a.shape = s;
  return a;
}

OpAttrs conv_attr(std::size_t stride, std::size_t pad, const Shape& s = {}) {
  OpAttrs a;
  a.stride = stride;
  a.pad = pad;
  a.shape = s;
  return a;
}

}  // namespace

template <class T> Var<T> add(Var<T> a, Var<T> b) { return record(OpKind::Add, {a, b}); }
template <class T> Var<T> sub(Var<T> a, Var<T> b) { return record(OpKind::Sub, {a, b}); }
template <class T> Var<T> mul(Var<T> a, Var<T> b) { return record(OpKind::Mul, {a, b}); }
template <class T> Var<T> div(Var<T> a, Var<T> b) { return record(OpKind::Div, {a, b}); }
template <class T> Var<T> scalar_mul(Var<T> a, double c) { return record(OpKind::ScalarMul, {a}, scalar_attr(c)); }
template <class T> Var<T> add_scalar(Var<T> a, double c) { return record(OpKind::AddScalar, {a}, scalar_attr(c)); }

template <class T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a, bool trans_b) {
  OpAttrs at;
  at.trans_a = trans_a;
  at.trans_b = trans_b;
  return record(OpKind::MatMul, {a, b}, at);
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride, Padding padding) {
  const auto& ws = w.shape();
  if (ws.size() != 4) throw ShapeError(fmt::format("conv2d: kernel must have rank 4, got {}", to_string(ws)));
  return record(OpKind::Conv2d, {x, w}, conv_attr(stride, padding_amount(padding, ws[2])));
}

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride, Padding padding) {
  const auto& ws = w.shape();
  if (ws.size() != 4) throw ShapeError(fmt::format("conv2d: kernel must have rank 4, got {}", to_string(ws)));
  return record(OpKind::Conv2d, {x, w, bias}, conv_attr(stride, padding_amount(padding, ws[2])));
}

template <class T>
Var<T> conv2d_padded(Var<T> x, Var<T> w, std::size_t stride, std::size_t pad) {
  return record(OpKind::Conv2d, {x, w}, conv_attr(stride, pad));
}

template <class T>
Var<T> conv2d_grad_input(Var<T> grad_out, Var<T> w, const Shape& input_shape, std::size_t stride, std::size_t pad) {
  return record(OpKind::Conv2dGradInput, {grad_out, w}, conv_attr(stride, pad, input_shape));
}

template <class T>
Var<T> conv2d_grad_weight(Var<T> x, Var<T> grad_out, const Shape& weight_shape, std::size_t stride, std::size_t pad) {
  return record(OpKind::Conv2dGradWeight, {x, grad_out}, conv_attr(stride, pad, weight_shape));
}

template <class T> Var<T> bias_add(Var<T> x, Var<T> bias) { return record(OpKind::BiasAdd, {x, bias}); }
template <class T> Var<T> channel_sum(Var<T> x) { return record(OpKind::ChannelSum, {x}); }
template <class T> Var<T> channel_broadcast(Var<T> v, const Shape& shape) {
  return record(OpKind::ChannelBroadcast, {v}, shape_attr(shape));
}

template <class T> Var<T> relu(Var<T> x) { return record(OpKind::Relu, {x}); }
template <class T> Var<T> relu_grad(Var<T> g, Var<T> x) { return record(OpKind::ReluGrad, {g, x}); }
template <class T> Var<T> leaky_relu(Var<T> x, double slope) {
  return record(OpKind::LeakyRelu, {x}, scalar_attr(slope));
}
template <class T> Var<T> leaky_relu_grad(Var<T> g, Var<T> x, double slope) {
  return record(OpKind::LeakyReluGrad, {g, x}, scalar_attr(slope));
}
template <class T> Var<T> sigmoid(Var<T> x) { return record(OpKind::Sigmoid, {x}); }
template <class T> Var<T> log(Var<T> x) { return record(OpKind::Log, {x}); }

template <class T>
Var<T> clamp(Var<T> x, double lo, double hi) {
  OpAttrs at;
  at.scalar = lo;
  at.scalar2 = hi;
  return record(OpKind::Clamp, {x}, at);
}

template <class T>
Var<T> clamp_grad(Var<T> g, Var<T> x, double lo, double hi) {
  OpAttrs at;
  at.scalar = lo;
  at.scalar2 = hi;
  return record(OpKind::ClampGrad, {g, x}, at);
}

template <class T> Var<T> sum(Var<T> x) { return record(OpKind::Sum, {x}); }
template <class T> Var<T> mean(Var<T> x) { return record(OpKind::Mean, {x}); }
template <class T> Var<T> frobenius_sq(Var<T> x) { return record(OpKind::FrobeniusSq, {x}); }
template <class T> Var<T> broadcast_scalar(Var<T> s, const Shape& shape) {
  return record(OpKind::BroadcastScalar, {s}, shape_attr(shape));
}
template <class T> Var<T> sum_per_sample(Var<T> x) { return record(OpKind::SumPerSample, {x}); }
template <class T> Var<T> broadcast_per_sample(Var<T> v, const Shape& shape) {
  return record(OpKind::BroadcastPerSample, {v}, shape_attr(shape));
}
template <class T> Var<T> square(Var<T> x) { return record(OpKind::Square, {x}); }
template <class T> Var<T> sqrt(Var<T> x) { return record(OpKind::Sqrt, {x}); }

template <class T> Var<T> pad(Var<T> x, std::size_t amount) { return record(OpKind::Pad, {x}, conv_attr(1, amount)); }
template <class T> Var<T> crop(Var<T> x, std::size_t amount) { return record(OpKind::Crop, {x}, conv_attr(1, amount)); }
template <class T> Var<T> reshape(Var<T> x, const Shape& shape) {
  return record(OpKind::Reshape, {x}, shape_attr(shape));
}
template <class T> Var<T> flatten(Var<T> x) {
  const auto& s = x.shape();
  return reshape(x, Shape{s[0], x.value().size() / s[0]});
}

template <class T> Var<T> tile_channels(Var<T> x, std::size_t k) {
  OpAttrs at;
  at.count = k;
  return record(OpKind::TileChannels, {x}, at);
}
template <class T> Var<T> fold_channels(Var<T> x, std::size_t k) {
  OpAttrs at;
  at.count = k;
  return record(OpKind::FoldChannels, {x}, at);
}

#define LDCT_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> evaluate<T>(OpKind, const Inputs<T>&, const OpAttrs&);                        \
  template Var<T> add<T>(Var<T>, Var<T>);                                                          \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                          \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                          \
  template Var<T> div<T>(Var<T>, Var<T>);                                                          \
  template Var<T> scalar_mul<T>(Var<T>, double);                                                   \
  template Var<T> add_scalar<T>(Var<T>, double);                                                   \
  template Var<T> matmul<T>(Var<T>, Var<T>, bool, bool);                                           \
  template Var<T> conv2d<T>(Var<T>, Var<T>, std::size_t, Padding);                                 \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, std::size_t, Padding);                         \
  template Var<T> conv2d_padded<T>(Var<T>, Var<T>, std::size_t, std::size_t);                      \
  template Var<T> conv2d_grad_input<T>(Var<T>, Var<T>, const Shape&, std::size_t, std::size_t);    \
  template Var<T> conv2d_grad_weight<T>(Var<T>, Var<T>, const Shape&, std::size_t, std::size_t);   \
  template Var<T> bias_add<T>(Var<T>, Var<T>);                                                     \
  template Var<T> channel_sum<T>(Var<T>);                                                          \
  template Var<T> channel_broadcast<T>(Var<T>, const Shape&);                                      \
  template Var<T> relu<T>(Var<T>);                                                                 \
  template Var<T> relu_grad<T>(Var<T>, Var<T>);                                                    \
  template Var<T> leaky_relu<T>(Var<T>, double);                                                   \
  template Var<T> leaky_relu_grad<T>(Var<T>, Var<T>, double);                                      \
  template Var<T> sigmoid<T>(Var<T>);                                                              \
  template Var<T> log<T>(Var<T>);                                                                  \
  template Var<T> clamp<T>(Var<T>, double, double);                                                \
  template Var<T> clamp_grad<T>(Var<T>, Var<T>, double, double);                                   \
  template Var<T> sum<T>(Var<T>);                                                                  \
  template Var<T> mean<T>(Var<T>);                                                                 \
  template Var<T> frobenius_sq<T>(Var<T>);                                                         \
  template Var<T> broadcast_scalar<T>(Var<T>, const Shape&);                                       \
  template Var<T> sum_per_sample<T>(Var<T>);                                                       \
  template Var<T> broadcast_per_sample<T>(Var<T>, const Shape&);                                   \
  template Var<T> square<T>(Var<T>);                                                              \
  template Var<T> sqrt<T>(Var<T>);                                                                \
  template Var<T> pad<T>(Var<T>, std::size_t);                                                     \
  template Var<T> crop<T>(Var<T>, std::size_t);                                                    \
  template Var<T> reshape<T>(Var<T>, const Shape&);                                                \
  template Var<T> flatten<T>(Var<T>);                                                              \
  template Var<T> tile_channels<T>(Var<T>, std::size_t);                                           \
  template Var<T> fold_channels<T>(Var<T>, std::size_t);

LDCT_INSTANTIATE_OPS(float)
LDCT_INSTANTIATE_OPS(double)

}  // namespace ldct::ad
