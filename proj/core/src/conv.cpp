#include "conv.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "ldct/parallel.hpp"

namespace ldct::detail {
namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Samples whose weight-gradient contributions are summed together before the
// ordered reduction. Fixed so the reduction order never depends on threads.
constexpr std::size_t kWeightGradChunk = 4;

// Output columns [lo, hi) whose input column ow * stride + j - pad is inside the row.
struct ColumnRange {
  std::size_t lo, hi;
};

inline ColumnRange valid_columns(const ConvGeometry& g, std::size_t j) {
  const long pad = static_cast<long>(g.pad), s = static_cast<long>(g.stride), jj = static_cast<long>(j);
  const long w = static_cast<long>(g.in_w), out_w = static_cast<long>(g.out_w);
  long lo = pad > jj ? (pad - jj + s - 1) / s : 0;
  long hi = (w - 1 + pad - jj) >= 0 ? (w - 1 + pad - jj) / s + 1 : 0;
  lo = std::min(lo, out_w);
  hi = std::clamp(hi, lo, out_w);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

template <class T>
void im2col(const ConvGeometry& g, const T* x, T* cols) {
  const std::size_t opix = g.out_pixels();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const T* plane = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        T* row = cols + ((c * g.kh + i) * g.kw + j) * opix;
        const auto [lo, hi] = valid_columns(g, j);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          T* dst = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<long>(g.in_h) || lo >= hi) {
            std::fill(dst, dst + g.out_w, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + g.out_w, T(0));
          const T* src = plane + static_cast<std::size_t>(ih) * g.in_w + (lo * g.stride + j - g.pad);
          if (g.stride == 1) {
            std::copy(src, src + (hi - lo), dst + lo);
          } else {
            for (std::size_t ow = lo; ow < hi; ++ow, src += g.stride) dst[ow] = *src;
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* cols, T* x) {
  const std::size_t opix = g.out_pixels();
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    T* plane = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const T* row = cols + ((c * g.kh + i) * g.kw + j) * opix;
        const auto [lo, hi] = valid_columns(g, j);
        if (lo >= hi) continue;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long ih = static_cast<long>(oh * g.stride + i) - static_cast<long>(g.pad);
          if (ih < 0 || ih >= static_cast<long>(g.in_h)) continue;
          T* dst = plane + static_cast<std::size_t>(ih) * g.in_w + (lo * g.stride + j - g.pad);
          const T* src = row + oh * g.out_w;
          for (std::size_t ow = lo; ow < hi; ++ow, dst += g.stride) *dst += src[ow];
        }
      }
    }
  }
}

}  // namespace

template <class T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::size_t K = g.patch_size();
  const std::size_t P = g.out_pixels();
  const std::size_t in_stride = g.in_ch * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_ch * P;
  ConstMapMat<T> W(w, g.out_ch, K);
  parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
    std::vector<T> cols(K * P);
    for (std::size_t n = begin; n < end; ++n) {
      im2col(g, x + n * in_stride, cols.data());
      MapMat<T> Y(y + n * out_stride, g.out_ch, P);
      Y.noalias() = W * ConstMapMat<T>(cols.data(), K, P);
      if (bias) {
        for (std::size_t o = 0; o < g.out_ch; ++o) Y.row(o).array() += bias[o];
      }
    }
  });
}

template <class T>
void conv_backward_input(const ConvGeometry& g, const T* grad_out, const T* w, T* grad_in) {
  const std::size_t K = g.patch_size();
  const std::size_t P = g.out_pixels();
  const std::size_t in_stride = g.in_ch * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_ch * P;
  ConstMapMat<T> W(w, g.out_ch, K);
  std::fill(grad_in, grad_in + g.batch * in_stride, T(0));
  parallel_for(g.batch, [&](std::size_t begin, std::size_t end) {
    RowMat<T> cols(K, P);
    for (std::size_t n = begin; n < end; ++n) {
      cols.noalias() = W.transpose() * ConstMapMat<T>(grad_out + n * out_stride, g.out_ch, P);
      col2im_add(g, cols.data(), grad_in + n * in_stride);
    }
  });
}

template <class T>
void conv_backward_weight(const ConvGeometry& g, const T* x, const T* grad_out, T* grad_w) {
  const std::size_t K = g.patch_size();
  const std::size_t P = g.out_pixels();
  const std::size_t in_stride = g.in_ch * g.in_h * g.in_w;
  const std::size_t out_stride = g.out_ch * P;
  const std::size_t n_chunks = (g.batch + kWeightGradChunk - 1) / kWeightGradChunk;
  std::vector<RowMat<T>> partial(n_chunks);
  parallel_for(n_chunks, [&](std::size_t begin, std::size_t end) {
    std::vector<T> cols(K * P);
    for (std::size_t c = begin; c < end; ++c) {
      RowMat<T> acc = RowMat<T>::Zero(g.out_ch, K);
      const std::size_t last = std::min(g.batch, (c + 1) * kWeightGradChunk);
      for (std::size_t n = c * kWeightGradChunk; n < last; ++n) {
        im2col(g, x + n * in_stride, cols.data());
        acc.noalias() += ConstMapMat<T>(grad_out + n * out_stride, g.out_ch, P) *
                         ConstMapMat<T>(cols.data(), K, P).transpose();
      }
      partial[c] = std::move(acc);
    }
  });
  MapMat<T> GW(grad_w, g.out_ch, K);
  GW.setZero();
  for (const auto& p : partial) GW += p;
}

template <class T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k, bool trans_a, bool trans_b) {
  MapMat<T> C(c, m, n);
  ConstMapMat<T> A(a, trans_a ? k : m, trans_a ? m : k);
  ConstMapMat<T> B(b, trans_b ? n : k, trans_b ? k : n);
  if (!trans_a && !trans_b) {
    C.noalias() = A * B;
  } else if (trans_a && !trans_b) {
    C.noalias() = A.transpose() * B;
  } else if (!trans_a && trans_b) {
    C.noalias() = A * B.transpose();
  } else {
    C.noalias() = A.transpose() * B.transpose();
  }
}

template void conv_forward<float>(const ConvGeometry&, const float*, const float*, const float*, float*);
template void conv_forward<double>(const ConvGeometry&, const double*, const double*, const double*, double*);
template void conv_backward_input<float>(const ConvGeometry&, const float*, const float*, float*);
template void conv_backward_input<double>(const ConvGeometry&, const double*, const double*, double*);
template void conv_backward_weight<float>(const ConvGeometry&, const float*, const float*, float*);
template void conv_backward_weight<double>(const ConvGeometry&, const double*, const double*, double*);
template void gemm<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t, bool, bool);
template void gemm<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t, bool, bool);

}  // namespace ldct::detail
