#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "ldct/ct_sim.hpp"
#include "ldct/tensor.hpp"

namespace ldct::metrics {

/// Default peak for images in HU: the width of the [-1000, 1000] normalization window.
inline constexpr double kDefaultPeak = 2000.0;
inline constexpr double kPsnrCap = 99.0;

struct RoiSpec {
  std::size_t row = 0, col = 0, height = 1, width = 1;
  std::string label;

  /// Throws ShapeError unless the rectangle lies inside an image of the given size.
  void check_inside(std::size_t rows, std::size_t cols) const;
};

struct Psnr {
  double db = 0;
  /// Zero error; db holds the cap.
  bool identical = false;
};

Psnr psnr(const Tensor<double>& candidate, const Tensor<double>& reference, double peak = kDefaultPeak);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = kDefaultPeak;
};

/// Mean Gaussian-weighted local SSIM over every window position fully inside the image.
double ssim(const Tensor<double>& candidate, const Tensor<double>& reference, const SsimOptions& options = {});

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
std::vector<double> gaussian_taps(std::size_t window, double sigma);

struct RoiStats {
  double mean = 0;
  double sd = 0;
  /// Single-pixel region; sd is reported as 0.
  bool degenerate = false;
};

RoiStats roi_stats(const Tensor<double>& image, const RoiSpec& roi);

/// Largest axis-aligned pixel rectangle inside a circular phantom ROI.
RoiSpec roi_rect(const ct::Phantom& phantom, const ct::Roi& roi, std::string label);

struct EvalRow {
  std::string method;
  Psnr psnr;
  double ssim = 0;
  std::vector<RoiStats> rois;
};

struct EvalReport {
  std::vector<std::string> roi_labels;
  std::vector<EvalRow> rows;

  std::string to_csv() const;
  std::string to_table() const;
};

struct EvalOptions {
  double peak = kDefaultPeak;
  SsimOptions ssim;
};

/// One row for the LDCT baseline followed by one per method, in the given order.
EvalReport evaluate_methods(const std::vector<std::pair<std::string, Tensor<double>>>& methods,
                            const Tensor<double>& ndct, const Tensor<double>& ldct, const std::vector<RoiSpec>& rois,
                            const EvalOptions& options = {});

}  // namespace ldct::metrics
