#include "ldct/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace ldct::metrics {

namespace {

void require_same(const Tensor<double>& a, const Tensor<double>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shapes {} and {} differ", what, to_string(a.shape()), to_string(b.shape())));
  }
  if (a.empty()) throw ShapeError(fmt::format("{}: empty image", what));
}

void require_image(const Tensor<double>& a, const char* what) {
  if (a.rank() != 2) throw ShapeError(fmt::format("{}: expected [rows, cols], got {}", what, to_string(a.shape())));
}

// Valid-mode separable filtering of a row-major image.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t rows, std::size_t cols,
                                 const std::vector<double>& taps) {
  const std::size_t k = taps.size(), orows = rows - k + 1, ocols = cols - k + 1;
  std::vector<double> tmp(rows * ocols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* src = img.data() + r * cols;
    for (std::size_t c = 0; c < ocols; ++c) {
      double s = 0;
      for (std::size_t j = 0; j < k; ++j) s += taps[j] * src[c + j];
      tmp[r * ocols + c] = s;
    }
  }
  std::vector<double> out(orows * ocols);
  for (std::size_t r = 0; r < orows; ++r) {
    for (std::size_t c = 0; c < ocols; ++c) {
      double s = 0;
      for (std::size_t i = 0; i < k; ++i) s += taps[i] * tmp[(r + i) * ocols + c];
      out[r * ocols + c] = s;
    }
  }
  return out;
}

std::string csv_number(double v) { return std::isnan(v) ? std::string("nan") : fmt::format("{}", v); }

}  // namespace

void RoiSpec::check_inside(std::size_t rows, std::size_t cols) const {
  if (height == 0 || width == 0 || row + height > rows || col + width > cols) {
    throw ShapeError(fmt::format("ROI '{}' ({}, {}, {}x{}) is not inside a {}x{} image", label, row, col, height,
                                 width, rows, cols));
  }
}

Psnr psnr(const Tensor<double>& candidate, const Tensor<double>& reference, double peak) {
  require_same(candidate, reference, "psnr");
  if (!(peak > 0)) throw std::invalid_argument("psnr: peak must be positive");
  double sse = 0;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    const double d = candidate[i] - reference[i];
    sse += d * d;
  }
  if (sse == 0) return {kPsnrCap, true};
  const double mse = sse / static_cast<double>(candidate.size());
  return {std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse)), false};
}

std::vector<double> gaussian_taps(std::size_t window, double sigma) {
  if (window == 0 || window % 2 == 0) throw std::invalid_argument("ssim: window must be odd");
  if (!(sigma > 0)) throw std::invalid_argument("ssim: sigma must be positive");
  std::vector<double> taps(window);
  const double centre = static_cast<double>(window / 2);
  double total = 0;
  for (std::size_t i = 0; i < window; ++i) {
    const double d = static_cast<double>(i) - centre;
    taps[i] = std::exp(-d * d / (2 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

double ssim(const Tensor<double>& candidate, const Tensor<double>& reference, const SsimOptions& o) {
  require_same(candidate, reference, "ssim");
  require_image(candidate, "ssim");
  const auto taps = gaussian_taps(o.window, o.sigma);
  const std::size_t rows = candidate.dim(0), cols = candidate.dim(1);
  if (rows < o.window || cols < o.window) {
    throw ShapeError(fmt::format("ssim: {}x{} image is smaller than the {}x{} window", rows, cols, o.window, o.window));
  }
  const std::size_t n = candidate.size();
  std::vector<double> x(candidate.values().begin(), candidate.values().end());
  std::vector<double> y(reference.values().begin(), reference.values().end());
  std::vector<double> xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, rows, cols, taps);
  const auto my = filter_valid(y, rows, cols, taps);
  const auto exx = filter_valid(xx, rows, cols, taps);
  const auto eyy = filter_valid(yy, rows, cols, taps);
  const auto exy = filter_valid(xy, rows, cols, taps);
  const double c1 = (o.k1 * o.peak) * (o.k1 * o.peak);
  const double c2 = (o.k2 * o.peak) * (o.k2 * o.peak);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double mxy = mx[i] * my[i];
    const double sx = exx[i] - mx[i] * mx[i];
    const double sy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mxy;
    const double num = (2 * mxy + c1) * (2 * sxy + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (sx + sy + c2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

RoiStats roi_stats(const Tensor<double>& image, const RoiSpec& roi) {
  require_image(image, "roi_stats");
  roi.check_inside(image.dim(0), image.dim(1));
  const std::size_t cols = image.dim(1), n = roi.height * roi.width;
  double sum = 0;
  for (std::size_t r = 0; r < roi.height; ++r)
    for (std::size_t c = 0; c < roi.width; ++c) sum += image[(roi.row + r) * cols + roi.col + c];
  const double mean = sum / static_cast<double>(n);
  if (n == 1) return {mean, 0.0, true};
  double ss = 0;
  for (std::size_t r = 0; r < roi.height; ++r) {
    for (std::size_t c = 0; c < roi.width; ++c) {
      const double d = image[(roi.row + r) * cols + roi.col + c] - mean;
      ss += d * d;
    }
  }
  return {mean, std::sqrt(ss / static_cast<double>(n - 1)), false};
}

RoiSpec roi_rect(const ct::Phantom& phantom, const ct::Roi& roi, std::string label) {
  const double half = roi.r / std::numbers::sqrt2;
  const std::size_t g = phantom.grid;
  const double p = phantom.pixel_size;
  std::size_t r0 = g, r1 = 0, c0 = g, c1 = 0;
  for (std::size_t i = 0; i < g; ++i) {
    const double y = (static_cast<double>(g) / 2.0 - static_cast<double>(i) - 0.5) * p;
    const double x = (static_cast<double>(i) + 0.5 - static_cast<double>(g) / 2.0) * p;
    if (std::abs(y - roi.cy) <= half) r0 = std::min(r0, i), r1 = std::max(r1, i);
    if (std::abs(x - roi.cx) <= half) c0 = std::min(c0, i), c1 = std::max(c1, i);
  }
  if (r0 > r1 || c0 > c1) throw std::invalid_argument(fmt::format("ROI '{}' covers no pixel", label));
  return {r0, c0, r1 - r0 + 1, c1 - c0 + 1, std::move(label)};
}

std::string EvalReport::to_csv() const {
  std::string out = "method,psnr,ssim";
  for (std::size_t k = 0; k < roi_labels.size(); ++k) out += fmt::format(",roi{0}_mean,roi{0}_sd", k + 1);
  out += '\n';
  for (const auto& row : rows) {
    out += fmt::format("{},{},{}", row.method, csv_number(row.psnr.db), csv_number(row.ssim));
    for (const auto& s : row.rois) out += fmt::format(",{},{}", csv_number(s.mean), csv_number(s.sd));
    out += '\n';
  }
  return out;
}

std::string EvalReport::to_table() const {
  std::size_t name_width = 6;
  for (const auto& row : rows) name_width = std::max(name_width, row.method.size());
  std::string out = fmt::format("{:<{}}  {:>8}  {:>7}", "Method", name_width, "PSNR", "SSIM");
  for (const auto& label : roi_labels) out += fmt::format("  {:>20}", label + " mean/SD");
  out += '\n';
  for (const auto& row : rows) {
    out += fmt::format("{:<{}}  {:>8.4f}  {:>7.4f}", row.method, name_width, row.psnr.db, row.ssim);
    for (const auto& s : row.rois) out += fmt::format("  {:>20}", fmt::format("{:.2f} / {:.2f}", s.mean, s.sd));
    out += '\n';
  }
  return out;
}

EvalReport evaluate_methods(const std::vector<std::pair<std::string, Tensor<double>>>& methods,
                            const Tensor<double>& ndct, const Tensor<double>& ldct, const std::vector<RoiSpec>& rois,
                            const EvalOptions& options) {
  require_image(ndct, "evaluate_methods");
  for (const auto& roi : rois) roi.check_inside(ndct.dim(0), ndct.dim(1));
  EvalReport report;
  for (const auto& roi : rois) report.roi_labels.push_back(roi.label);
  auto row_for = [&](const std::string& name, const Tensor<double>& img) {
    if (img.shape() != ndct.shape()) {
      throw ShapeError(fmt::format("method '{}': image shape {} differs from reference {}", name,
                                   to_string(img.shape()), to_string(ndct.shape())));
    }
    EvalRow row{name, psnr(img, ndct, options.peak), ssim(img, ndct, options.ssim), {}};
    for (const auto& roi : rois) row.rois.push_back(roi_stats(img, roi));
    return row;
  };
  report.rows.push_back(row_for("LDCT", ldct));
  for (const auto& [name, img] : methods) report.rows.push_back(row_for(name, img));
  return report;
}

}  // namespace ldct::metrics
