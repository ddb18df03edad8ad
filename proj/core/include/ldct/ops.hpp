#pragma once

// Differentiable primitives. Every function validates shapes, computes the
// forward value and appends one node to the operands' tape.

#include <cstddef>
#include <vector>

#include "ldct/tape.hpp"

namespace ldct::ad {

enum class Padding { Same, Valid };

std::size_t padding_amount(Padding padding, std::size_t kernel);
std::size_t conv_output_size(std::size_t input, std::size_t kernel, std::size_t stride, std::size_t pad);

/// Forward value of a node kind, shared by op construction and tape replay.
template <class T>
Tensor<T> evaluate(OpKind op, const std::vector<const Tensor<T>*>& inputs, const OpAttrs& attrs);

// Elementwise arithmetic (operands of identical shape).
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> div(Var<T> a, Var<T> b);
template <class T> Var<T> scalar_mul(Var<T> a, double c);
template <class T> Var<T> add_scalar(Var<T> a, double c);

/// op(a) * op(b) for rank-2 operands; op transposes when the flag is set.
template <class T> Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false);

// Convolution over (batch, channels, h, w) with (out_ch, in_ch, kh, kw) kernels.
template <class T> Var<T> conv2d(Var<T> x, Var<T> w, std::size_t stride = 1, Padding padding = Padding::Same);
template <class T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, std::size_t stride = 1, Padding padding = Padding::Same);
/// Convolution with an explicit per-side zero padding.
template <class T> Var<T> conv2d_padded(Var<T> x, Var<T> w, std::size_t stride, std::size_t pad);
template <class T>
Var<T> conv2d_grad_input(Var<T> grad_out, Var<T> w, const Shape& input_shape, std::size_t stride, std::size_t pad);
template <class T>
Var<T> conv2d_grad_weight(Var<T> x, Var<T> grad_out, const Shape& weight_shape, std::size_t stride, std::size_t pad);

/// Adds a per-channel bias along dimension 1.
template <class T> Var<T> bias_add(Var<T> x, Var<T> bias);
/// Sums over every dimension except 1, giving one value per channel.
template <class T> Var<T> channel_sum(Var<T> x);
template <class T> Var<T> channel_broadcast(Var<T> v, const Shape& shape);

// Activations. The derivative of relu at exactly 0 is 0.
template <class T> Var<T> relu(Var<T> x);
template <class T> Var<T> relu_grad(Var<T> grad_out, Var<T> x);
template <class T> Var<T> leaky_relu(Var<T> x, double slope = 0.2);
template <class T> Var<T> leaky_relu_grad(Var<T> grad_out, Var<T> x, double slope = 0.2);
template <class T> Var<T> sigmoid(Var<T> x);
template <class T> Var<T> log(Var<T> x);
template <class T> Var<T> clamp(Var<T> x, double lo, double hi);
template <class T> Var<T> clamp_grad(Var<T> grad_out, Var<T> x, double lo, double hi);

// Reductions to shape [1] and their adjoints.
template <class T> Var<T> sum(Var<T> x);
template <class T> Var<T> mean(Var<T> x);
template <class T> Var<T> frobenius_sq(Var<T> x);
template <class T> Var<T> broadcast_scalar(Var<T> s, const Shape& shape);

/// Sums every non-batch dimension: [B, ...] -> [B].
template <class T> Var<T> sum_per_sample(Var<T> x);
template <class T> Var<T> broadcast_per_sample(Var<T> v, const Shape& shape);

template <class T> Var<T> square(Var<T> x);
template <class T> Var<T> sqrt(Var<T> x);

// Spatial zero padding of the last two dimensions of a rank-4 tensor.
template <class T> Var<T> pad(Var<T> x, std::size_t amount);
template <class T> Var<T> crop(Var<T> x, std::size_t amount);

template <class T> Var<T> reshape(Var<T> x, const Shape& shape);
/// [B, ...] -> [B, prod(...)].
template <class T> Var<T> flatten(Var<T> x);

/// Repeats every channel k times along dimension 1 ([B,C,H,W] -> [B,C*k,H,W]).
template <class T> Var<T> tile_channels(Var<T> x, std::size_t k);
/// Adjoint of tile_channels: sums groups of k consecutive channels.
template <class T> Var<T> fold_channels(Var<T> x, std::size_t k);

template <class T> Var<T> operator+(Var<T> a, Var<T> b) { return add(a, b); }
template <class T> Var<T> operator-(Var<T> a, Var<T> b) { return sub(a, b); }
template <class T> Var<T> operator*(Var<T> a, Var<T> b) { return mul(a, b); }
template <class T> Var<T> operator*(double c, Var<T> a) { return scalar_mul(a, c); }

}  // namespace ldct::ad
