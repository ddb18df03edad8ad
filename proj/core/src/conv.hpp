#pragma once

#include <cstddef>

namespace ldct::detail {

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_ch = 0;
  std::size_t in_h = 0;
  std::size_t in_w = 0;
  std::size_t out_ch = 0;
  std::size_t kh = 0;
  std::size_t kw = 0;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t out_h = 0;
  std::size_t out_w = 0;

  std::size_t patch_size() const { return in_ch * kh * kw; }
  std::size_t out_pixels() const { return out_h * out_w; }
};

// im2col + GEMM kernels. bias may be null.
template <class T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y);
template <class T>
void conv_backward_input(const ConvGeometry& g, const T* grad_out, const T* w, T* grad_in);
template <class T>
void conv_backward_weight(const ConvGeometry& g, const T* x, const T* grad_out, T* grad_w);

// Row-major GEMM: c = op(a) * op(b), with op(a) of size m x k and op(b) k x n.
template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool trans_a, bool trans_b);

}  // namespace ldct::detail
