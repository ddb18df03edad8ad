#include "ldct/ct_sim.hpp"

#include <fftw3.h>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <random>

#include "ldct/parallel.hpp"

namespace ldct::ct {
namespace {

using std::numbers::pi;

bool inside_ellipse(const Ellipse& e, double x, double y) {
  const double dx = x - e.cx, dy = y - e.cy;
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  return (u * u) / (e.a * e.a) + (v * v) / (e.b * e.b) <= 1.0;
}

double pixel_x(std::size_t col, std::size_t grid, double pixel) {
  return (static_cast<double>(col) + 0.5 - static_cast<double>(grid) / 2.0) * pixel;
}

double pixel_y(std::size_t row, std::size_t grid, double pixel) {
  return (static_cast<double>(grid) / 2.0 - static_cast<double>(row) - 0.5) * pixel;
}

double bilinear(const double* img, std::size_t n, double u, double v) {
  // u: column, v: row, both in pixel-centre coordinates
  const double fu = std::floor(u), fv = std::floor(v);
  const long c0 = static_cast<long>(fu), r0 = static_cast<long>(fv);
  const double wu = u - fu, wv = v - fv;
  const long ln = static_cast<long>(n);
  auto at = [&](long r, long c) -> double {
    if (r < 0 || c < 0 || r >= ln || c >= ln) return 0.0;
    return img[static_cast<std::size_t>(r) * n + static_cast<std::size_t>(c)];
  };
  return (1 - wv) * ((1 - wu) * at(r0, c0) + wu * at(r0, c0 + 1)) +
         wv * ((1 - wu) * at(r0 + 1, c0) + wu * at(r0 + 1, c0 + 1));
}

std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

// Filter response of the band-limited ramp with Hann apodization, length pad/2+1.
std::vector<double> ramp_response(std::size_t pad, double tau) {
  std::vector<double> h(pad, 0.0);
  h[0] = 1.0 / (4.0 * tau * tau);
  for (std::size_t n = 1; n < pad / 2; ++n) {
    if (n % 2 == 1) {
      const double v = -1.0 / (static_cast<double>(n * n) * pi * pi * tau * tau);
      h[n] = v;
      h[pad - n] = v;
    }
  }
  const std::size_t nc = pad / 2 + 1;
  fftw_complex* spec = fftw_alloc_complex(nc);
  double* buf = fftw_alloc_real(pad);
  std::copy(h.begin(), h.end(), buf);
  fftw_plan plan;
  {
    std::lock_guard lock(fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(static_cast<int>(pad), buf, spec, FFTW_ESTIMATE);
  }
  fftw_execute(plan);
  std::vector<double> response(nc);
  for (std::size_t k = 0; k < nc; ++k) {
    const double f = static_cast<double>(k) / static_cast<double>(pad / 2);
    const double window = 0.5 * (1.0 + std::cos(pi * f));
    response[k] = spec[k][0] * window;
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(spec);
  fftw_free(buf);
  return response;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ (stream * 0xd1b54a32d192ed03ULL));
}

void ScanProtocol::validate() const {
  if (n_views < 16) throw std::invalid_argument(fmt::format("n_views must be >= 16, got {}", n_views));
  if (n_detectors != 0 && n_detectors < 16) {
    throw std::invalid_argument(fmt::format("n_detectors must be >= 16, got {}", n_detectors));
  }
  if (!(incident_photons * dose_factor >= 1.0)) {
    throw std::invalid_argument(
        fmt::format("incident photons x dose factor must be >= 1, got {} x {}", incident_photons, dose_factor));
  }
  if (!(electronic_sigma >= 0.0)) throw std::invalid_argument("electronic sigma must be >= 0");
}

std::size_t ScanProtocol::detectors_for(std::size_t grid) const {
  if (n_detectors) return n_detectors;
  std::size_t n = static_cast<std::size_t>(std::ceil(static_cast<double>(grid) * std::numbers::sqrt2)) + 2;
  return n % 2 ? n : n + 1;
}

Tensor<double> render_phantom(const Phantom& p) {
  if (p.grid == 0 || !(p.pixel_size > 0)) throw std::invalid_argument("phantom grid and pixel size must be positive");
  Tensor<double> img({p.grid, p.grid});
  for (std::size_t r = 0; r < p.grid; ++r) {
    const double y = pixel_y(r, p.grid, p.pixel_size);
    for (std::size_t c = 0; c < p.grid; ++c) {
      const double x = pixel_x(c, p.grid, p.pixel_size);
      double mu = 0.0;
      for (const auto& e : p.ellipses) {
        if (inside_ellipse(e, x, y)) mu += e.mu;
      }
      for (const auto& l : p.lesions) {
        if ((x - l.cx) * (x - l.cx) + (y - l.cy) * (y - l.cy) <= l.r * l.r) mu += l.dmu;
      }
      img[r * p.grid + c] = mu;
    }
  }
  return img;
}

std::vector<std::size_t> roi_pixels(const Phantom& p, const Roi& roi) {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < p.grid; ++r) {
    const double y = pixel_y(r, p.grid, p.pixel_size);
    for (std::size_t c = 0; c < p.grid; ++c) {
      const double x = pixel_x(c, p.grid, p.pixel_size);
      if ((x - roi.cx) * (x - roi.cx) + (y - roi.cy) * (y - roi.cy) <= roi.r * roi.r) out.push_back(r * p.grid + c);
    }
  }
  return out;
}

Sinogram radon_forward(const Tensor<double>& image, double pixel_size, const ScanProtocol& protocol) {
  protocol.validate();
  if (image.rank() != 2 || image.dim(0) != image.dim(1)) {
    throw ShapeError(fmt::format("radon_forward: image must be square, got {}", to_string(image.shape())));
  }
  const std::size_t n = image.dim(0);
  const std::size_t views = protocol.n_views;
  const std::size_t dets = protocol.detectors_for(n);
  const double spacing = pixel_size;
  const double step = pixel_size / 2.0;
  const double half_diag = static_cast<double>(n) * pixel_size * std::numbers::sqrt2 / 2.0;
  const std::size_t samples = 2 * static_cast<std::size_t>(std::ceil(half_diag / step)) + 1;
  const double det_mid = (static_cast<double>(dets) - 1.0) / 2.0;
  const double samp_mid = (static_cast<double>(samples) - 1.0) / 2.0;
  const double centre = static_cast<double>(n) / 2.0 - 0.5;

  Sinogram out{Tensor<double>({views, dets}), n, pixel_size, spacing};
  const double* img = image.data();
  double* sino = out.values.data();
  parallel_for(views, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const double theta = pi * static_cast<double>(k) / static_cast<double>(views);
      const double c = std::cos(theta), s = std::sin(theta);
      for (std::size_t d = 0; d < dets; ++d) {
        const double sd = (static_cast<double>(d) - det_mid) * spacing;
        double acc = 0.0;
        for (std::size_t m = 0; m < samples; ++m) {
          const double t = (static_cast<double>(m) - samp_mid) * step;
          const double x = sd * c - t * s;
          const double y = sd * s + t * c;
          acc += bilinear(img, n, x / pixel_size + centre, centre - y / pixel_size);
        }
        sino[k * dets + d] = acc * step;
      }
    }
  });
  return out;
}

NoisySinogram apply_dose_noise(const Sinogram& sino, const ScanProtocol& protocol, std::uint64_t seed) {
  protocol.validate();
  const double i0 = protocol.incident_photons * protocol.dose_factor;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> electronic(0.0, protocol.electronic_sigma > 0 ? protocol.electronic_sigma : 1.0);
  NoisySinogram out{sino, 0};
  for (auto& p : out.sinogram.values.values()) {
    const double lambda = i0 * std::exp(-p);
    std::poisson_distribution<long long> quanta(lambda);
    double counts = static_cast<double>(quanta(rng));
    if (protocol.electronic_sigma > 0) counts += electronic(rng);
    if (counts < 1.0) {
      counts = 1.0;
      ++out.clamp_events;
    }
    p = -std::log(counts / i0);
  }
  return out;
}

Tensor<double> fbp_reconstruct(const Sinogram& sino) {
  const std::size_t views = sino.n_views();
  const std::size_t dets = sino.n_detectors();
  const std::size_t n = sino.grid;
  const double tau = sino.detector_spacing;
  std::size_t pad = 64;
  while (pad < 2 * dets) pad *= 2;
  const std::vector<double> response = ramp_response(pad, tau);
  const std::size_t nc = pad / 2 + 1;

  Tensor<double> filtered({views, dets});
  {
    double* buf = fftw_alloc_real(pad);
    fftw_complex* spec = fftw_alloc_complex(nc);
    fftw_plan fwd, inv;
    {
      std::lock_guard lock(fftw_planner_mutex());
      fwd = fftw_plan_dft_r2c_1d(static_cast<int>(pad), buf, spec, FFTW_ESTIMATE);
      inv = fftw_plan_dft_c2r_1d(static_cast<int>(pad), spec, buf, FFTW_ESTIMATE);
    }
    const double scale = tau / static_cast<double>(pad);
    for (std::size_t k = 0; k < views; ++k) {
      std::fill(buf, buf + pad, 0.0);
      std::copy_n(sino.values.data() + k * dets, dets, buf);
      fftw_execute(fwd);
      for (std::size_t f = 0; f < nc; ++f) {
        spec[f][0] *= response[f];
        spec[f][1] *= response[f];
      }
      fftw_execute(inv);
      for (std::size_t d = 0; d < dets; ++d) filtered[k * dets + d] = buf[d] * scale;
    }
    {
      std::lock_guard lock(fftw_planner_mutex());
      fftw_destroy_plan(fwd);
      fftw_destroy_plan(inv);
    }
    fftw_free(buf);
    fftw_free(spec);
  }

  std::vector<double> cosv(views), sinv(views);
  for (std::size_t k = 0; k < views; ++k) {
    const double theta = pi * static_cast<double>(k) / static_cast<double>(views);
    cosv[k] = std::cos(theta);
    sinv[k] = std::sin(theta);
  }
  const double det_mid = (static_cast<double>(dets) - 1.0) / 2.0;
  const double weight = pi / static_cast<double>(views);
  Tensor<double> img({n, n});
  parallel_for(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const double y = pixel_y(r, n, sino.pixel_size);
      for (std::size_t c = 0; c < n; ++c) {
        const double x = pixel_x(c, n, sino.pixel_size);
        double acc = 0.0;
        for (std::size_t k = 0; k < views; ++k) {
          const double u = (x * cosv[k] + y * sinv[k]) / tau + det_mid;
          const double fu = std::floor(u);
          const long i = static_cast<long>(fu);
          if (i < 0 || i + 1 >= static_cast<long>(dets)) continue;
          const double w = u - fu;
          const double* row = filtered.data() + k * dets;
          acc += (1 - w) * row[i] + w * row[i + 1];
        }
        img[r * n + c] = acc * weight;
      }
    }
  });
  return img;
}

Tensor<double> to_hu(const Tensor<double>& mu, double mu_water) {
  Tensor<double> out = mu;
  for (auto& v : out.values()) v = 1000.0 * (v - mu_water) / mu_water;
  return out;
}

Tensor<double> from_hu(const Tensor<double>& hu, double mu_water) {
  Tensor<double> out = hu;
  for (auto& v : out.values()) v = hu_to_mu(v, mu_water);
  return out;
}

ImagePair make_pair(const Phantom& phantom, const ScanProtocol& protocol, std::uint64_t seed, double mu_water) {
  if (!(mu_water > 0)) throw std::invalid_argument("mu_water must be positive");
  const Sinogram clean = radon_forward(render_phantom(phantom), phantom.pixel_size, protocol);
  ScanProtocol normal = protocol, quarter = protocol;
  normal.dose_factor = 1.0;
  quarter.dose_factor = kQuarterDose;
  auto nd = apply_dose_noise(clean, normal, derive_seed(seed, 1));
  auto ld = apply_dose_noise(clean, quarter, derive_seed(seed, 2));
  return {to_hu(fbp_reconstruct(nd.sinogram), mu_water), to_hu(fbp_reconstruct(ld.sinogram), mu_water),
          nd.clamp_events + ld.clamp_events};
}

namespace {

double hu_delta(double hu) { return kMuWater * hu / 1000.0; }

bool flat(const Tensor<double>& img, const std::vector<std::size_t>& pix) {
  if (pix.empty()) return false;
  const double v0 = img[pix[0]];
  return std::all_of(pix.begin(), pix.end(), [&](std::size_t i) { return img[i] == v0; });
}

bool roi_fits(const Phantom& p, const Tensor<double>& img, const Roi& roi) {
  return flat(img, roi_pixels(p, roi));
}

}  // namespace

Phantom random_abdomen(std::uint64_t seed, std::size_t grid, double pixel_size) {
  std::mt19937_64 rng(derive_seed(seed, 0xab));
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double fov = static_cast<double>(grid) * pixel_size;
  const double scale = fov / 38.4;

  Phantom p;
  p.grid = grid;
  p.pixel_size = pixel_size;
  const double a = u(13.0, 15.5) * scale, b = u(9.5, 11.5) * scale;
  const double fat = u(1.2, 2.0) * scale;
  const double soft_hu = u(30.0, 50.0);
  const double fat_hu = u(-110.0, -80.0);
  // body outline in fat, soft-tissue interior
  p.ellipses.push_back({0, 0, a, b, 0, kMuWater + hu_delta(fat_hu)});
  p.ellipses.push_back({0, 0, a - fat, b - fat, 0, hu_delta(soft_hu - fat_hu)});
  // liver
  const Ellipse liver{-0.38 * a, 0.08 * b, 0.32 * a, 0.42 * b, u(-0.3, 0.3), hu_delta(u(15.0, 30.0))};
  p.ellipses.push_back(liver);
  // kidneys
  for (double side : {-1.0, 1.0}) {
    p.ellipses.push_back({side * 0.33 * a, -0.5 * b, u(1.4, 1.9) * scale, u(2.0, 2.4) * scale, side * u(0.2, 0.5),
                          hu_delta(u(-10.0, 25.0))});
  }
  // vertebral body and cortical rim, aorta
  const double vr = u(1.3, 1.6) * scale;
  p.ellipses.push_back({0, -0.55 * b, vr, vr, 0, hu_delta(u(250.0, 350.0))});
  p.ellipses.push_back({0, -0.55 * b, vr * 0.8, vr * 0.8, 0, -hu_delta(u(80.0, 150.0))});
  p.ellipses.push_back({-0.14 * a, -0.3 * b, u(0.8, 1.1) * scale, u(0.8, 1.1) * scale, 0, hu_delta(u(120.0, 180.0))});
  // bowel gas back down to air, kept inside the soft tissue and apart from each other
  const double soft_mu = p.ellipses[0].mu + p.ellipses[1].mu;
  const Ellipse inner{0, 0, a - fat - 0.3 * scale, b - fat - 0.3 * scale, 0, 0};
  const int n_gas = std::uniform_int_distribution<int>(1, 3)(rng);
  std::vector<Roi> gas;
  for (int attempt = 0; attempt < 100 && static_cast<int>(gas.size()) < n_gas; ++attempt) {
    const double r = u(0.4, 0.9) * scale;
    const double x = u(0.28, 0.45) * a, y = u(0.15, 0.4) * b;
    bool ok = true;
    for (double ang = 0; ang < 2 * pi; ang += pi / 8) {
      if (!inside_ellipse(inner, x + r * std::cos(ang), y + r * std::sin(ang))) ok = false;
    }
    for (const auto& g : gas) {
      if (std::hypot(x - g.cx, y - g.cy) < r + g.r + 0.2 * scale) ok = false;
    }
    if (ok) gas.push_back({x, y, r});
  }
  for (const auto& g : gas) p.ellipses.push_back({g.cx, g.cy, g.r, g.r * u(0.7, 1.0), u(0, pi), -soft_mu});

  Tensor<double> img = render_phantom(p);
  const double lc = std::cos(liver.theta), ls = std::sin(liver.theta);
  auto liver_point = [&](double fu, double fv) {
    const double du = fu * liver.a, dv = fv * liver.b;
    return std::pair{liver.cx + lc * du - ls * dv, liver.cy + ls * du + lc * dv};
  };

  // flat ROI in the liver, searched outward from its centre
  const double roi_r = 1.0 * scale;
  for (double fu : {0.0, 0.2, -0.2, 0.35, -0.35}) {
    for (double fv : {0.35, 0.2, 0.0, -0.2}) {
      auto [x, y] = liver_point(fu, fv);
      Roi roi{x, y, roi_r};
      if (roi_fits(p, img, roi)) {
        p.flat_rois.push_back(roi);
        break;
      }
    }
    if (!p.flat_rois.empty()) break;
  }

  // low-contrast lesions inside the liver, clear of the flat ROI
  const int n_lesions = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int attempt = 0; attempt < 200 && static_cast<int>(p.lesions.size()) < n_lesions; ++attempt) {
    const double r = u(0.6, 1.1) * scale;
    const double rho = u(0.0, 0.55), phi = u(0.0, 2 * pi);
    auto [x, y] = liver_point(rho * std::cos(phi), rho * std::sin(phi));
    const Lesion lesion{x, y, r, -hu_delta(u(60.0, 90.0))};
    bool ok = true;
    Ellipse shrunk = liver;
    shrunk.a -= r + 0.3 * scale;
    shrunk.b -= r + 0.3 * scale;
    if (shrunk.a <= 0 || shrunk.b <= 0 || !inside_ellipse(shrunk, x, y)) ok = false;
    for (const auto& roi : p.flat_rois) {
      if (std::hypot(x - roi.cx, y - roi.cy) < r + roi.r + 0.4 * scale) ok = false;
    }
    for (const auto& l : p.lesions) {
      if (std::hypot(x - l.cx, y - l.cy) < r + l.r + 0.4 * scale) ok = false;
    }
    if (ok) p.lesions.push_back(lesion);
  }
  if (p.lesions.empty()) {
    auto [x, y] = liver_point(0.0, -0.3);
    p.lesions.push_back({x, y, 0.6 * scale, -hu_delta(75.0)});
  }

  // second flat ROI in the soft tissue, anterior of the midline
  img = render_phantom(p);
  for (double fx : {0.0, 0.1, -0.05, 0.15}) {
    for (double fy : {0.55, 0.45, 0.62, 0.35}) {
      Roi roi{fx * a, fy * b, roi_r};
      if (roi_fits(p, img, roi)) {
        p.flat_rois.push_back(roi);
        fx = 1e9;
        break;
      }
    }
    if (fx > 1e8) break;
  }
  return p;
}

Phantom reference_phantom(std::size_t grid, double pixel_size) {
  // modified Shepp-Logan, intensities scaled to soft-tissue attenuation
  const double half = static_cast<double>(grid) * pixel_size / 2.0;
  const double k = kMuWater;
  struct E {
    double mu, a, b, x, y, deg;
  };
  const E table[] = {{1.0, .69, .92, 0, 0, 0},          {-.8, .6624, .874, 0, -.0184, 0},
                     {-.2, .11, .31, .22, 0, -18},       {-.2, .16, .41, -.22, 0, 18},
                     {.1, .21, .25, 0, .35, 0},          {.1, .046, .046, 0, .1, 0},
                     {.1, .046, .046, 0, -.1, 0},        {.1, .046, .023, -.08, -.605, 0},
                     {.1, .023, .023, 0, -.606, 0},      {.1, .023, .046, .06, -.605, 0}};
  Phantom p;
  p.grid = grid;
  p.pixel_size = pixel_size;
  for (const auto& e : table) {
    p.ellipses.push_back({e.x * half, e.y * half, e.a * half, e.b * half, e.deg * pi / 180.0, e.mu * k});
  }
  p.lesions.push_back({0.0, -0.3 * half, 0.04 * half, -0.02 * k});
  p.flat_rois.push_back({0.0, 0.35 * half, 0.08 * half});
  return p;
}

}  // namespace ldct::ct
