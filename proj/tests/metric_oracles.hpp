#pragma once
// Direct-formula image metrics, written independently of the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ldct/tensor.hpp"

namespace ldct::testing {

inline double oracle_psnr(const Tensor<double>& a, const Tensor<double>& b, double peak) {
  double mse = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
  mse /= static_cast<double>(a.size());
  return 10 * std::log10(peak * peak / mse);
}

// Straightforward per-window evaluation with a freshly built 2-D kernel.
inline double brute_ssim(const Tensor<double>& a, const Tensor<double>& b, std::size_t win, double sigma, double peak) {
  std::vector<double> k(win * win);
  double total_w = 0;
  const double c = (win - 1) / 2.0;
  for (std::size_t i = 0; i < win; ++i)
    for (std::size_t j = 0; j < win; ++j) {
      k[i * win + j] = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      total_w += k[i * win + j];
    }
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  const double c1 = std::pow(0.01 * peak, 2), c2 = std::pow(0.03 * peak, 2);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r + win <= rows; ++r) {
    for (std::size_t q = 0; q + win <= cols; ++q) {
      double ma = 0, mb = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double w = k[i * win + j] / total_w;
          ma += w * a[(r + i) * cols + q + j];
          mb += w * b[(r + i) * cols + q + j];
        }
      double va = 0, vb = 0, cov = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double w = k[i * win + j] / total_w;
          const double da = a[(r + i) * cols + q + j] - ma, db = b[(r + i) * cols + q + j] - mb;
          va += w * da * da;
          vb += w * db * db;
          cov += w * da * db;
        }
      sum += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++count;
    }
  }
  return sum / count;
}

struct OracleRoi {
  double mean = 0, sd = 0;
};

inline OracleRoi oracle_roi(const Tensor<double>& img, std::size_t row, std::size_t col, std::size_t h, std::size_t w) {
  const std::size_t cols = img.dim(1);
  std::vector<double> v;
  for (std::size_t r = row; r < row + h; ++r)
    for (std::size_t c = col; c < col + w; ++c) v.push_back(img[r * cols + c]);
  double sum = 0;
  for (double x : v) sum += x;
  const double mean = sum / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

inline double rel_diff(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace ldct::testing
