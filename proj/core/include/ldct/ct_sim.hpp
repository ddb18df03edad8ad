#pragma once

#include <cstdint>
#include <vector>

#include "ldct/tensor.hpp"

namespace ldct::ct {

/// Geometry is in cm, origin at the grid centre, y pointing up.
struct Ellipse {
  double cx = 0, cy = 0;
  double a = 1, b = 1;
  double theta = 0;  // radians, counter-clockwise
  double mu = 0;     // 1/cm, added where the ellipse covers a pixel centre
};

struct Lesion {
  double cx = 0, cy = 0;
  double r = 1;
  double dmu = 0;
};

/// Circular region used for mean/SD statistics.
struct Roi {
  double cx = 0, cy = 0;
  double r = 1;
};

struct Phantom {
  std::vector<Ellipse> ellipses;
  std::vector<Lesion> lesions;
  std::size_t grid = 256;
  double pixel_size = 0.15;
  /// Homogeneous regions away from edges and lesions.
  std::vector<Roi> flat_rois;
};

struct ScanProtocol {
  std::size_t n_views = 360;
  /// Zero selects enough detectors to cover the grid diagonal.
  std::size_t n_detectors = 0;
  double incident_photons = 1.0e5;
  double electronic_sigma = 5.0;
  double dose_factor = 1.0;

  void validate() const;
  std::size_t detectors_for(std::size_t grid) const;
};

/// Parallel-beam sinogram [n_views, n_detectors]; view k is at angle k*pi/n_views.
struct Sinogram {
  Tensor<double> values;
  std::size_t grid = 0;
  double pixel_size = 0;
  double detector_spacing = 0;

  std::size_t n_views() const { return values.dim(0); }
  std::size_t n_detectors() const { return values.dim(1); }
};

struct NoisySinogram {
  Sinogram sinogram;
  std::size_t clamp_events = 0;
};

Tensor<double> render_phantom(const Phantom& phantom);
/// Pixel membership of a disc ROI, as a row-major mask of the phantom grid.
std::vector<std::size_t> roi_pixels(const Phantom& phantom, const Roi& roi);

Sinogram radon_forward(const Tensor<double>& image, double pixel_size, const ScanProtocol& protocol);
NoisySinogram apply_dose_noise(const Sinogram& sino, const ScanProtocol& protocol, std::uint64_t seed);
Tensor<double> fbp_reconstruct(const Sinogram& sino);

inline constexpr double kMuWater = 0.19;

Tensor<double> to_hu(const Tensor<double>& mu, double mu_water = kMuWater);
Tensor<double> from_hu(const Tensor<double>& hu, double mu_water = kMuWater);
inline double hu_to_mu(double hu, double mu_water = kMuWater) { return mu_water * (1.0 + hu / 1000.0); }

struct ImagePair {
  Tensor<double> ndct;  // HU
  Tensor<double> ldct;  // HU
  std::size_t clamp_events = 0;
};

inline constexpr double kQuarterDose = 0.25;

/// Normal- and quarter-dose reconstructions of one phantom, with independent noise seeds derived from `seed`.
ImagePair make_pair(const Phantom& phantom, const ScanProtocol& protocol, std::uint64_t seed,
                    double mu_water = kMuWater);

/// Randomised abdominal slice: body, fat, organs, spine, gas, and at least one low-contrast lesion.
Phantom random_abdomen(std::uint64_t seed, std::size_t grid = 256, double pixel_size = 0.15);
/// Simple test object: uniform water body with a few inserts; used for reconstruction baselines.
Phantom reference_phantom(std::size_t grid = 128, double pixel_size = 0.3);

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace ldct::ct
