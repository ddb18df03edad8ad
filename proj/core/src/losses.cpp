#include "ldct/losses.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "ldct/autodiff.hpp"

namespace ldct::loss {

using namespace ldct::ad;
using ldct::to_string;

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::CnnMse: return "cnn-mse";
    case LossKind::CnnVgg: return "cnn-vgg";
    case LossKind::WganMse: return "wgan-mse";
    case LossKind::WganVgg: return "wgan-vgg";
    case LossKind::Wgan: return "wgan";
    case LossKind::Gan: return "gan";
  }
  return "unknown";
}

LossKind parse_loss_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::replace(lower.begin(), lower.end(), '_', '-');
  for (LossKind k : kAllLossKinds) {
    if (to_string(k) == lower) return k;
  }
  throw std::invalid_argument(
      fmt::format("unknown network kind '{}' (expected cnn-mse|cnn-vgg|wgan-mse|wgan-vgg|wgan|gan)", name));
}

bool uses_critic(LossKind kind) { return kind != LossKind::CnnMse && kind != LossKind::CnnVgg; }
bool is_wasserstein(LossKind kind) {
  return kind == LossKind::WganMse || kind == LossKind::WganVgg || kind == LossKind::Wgan;
}
bool uses_mse(LossKind kind) { return kind == LossKind::CnnMse || kind == LossKind::WganMse; }
bool uses_vgg(LossKind kind) { return kind == LossKind::CnnVgg || kind == LossKind::WganVgg; }

void LossWeights::validate() const {
  if (!(lambda_gp >= 0) || !(lambda1 >= 0) || !(lambda2 >= 0)) {
    throw std::invalid_argument(
        fmt::format("loss weights must be >= 0 (lambda_gp={}, lambda1={}, lambda2={})", lambda_gp, lambda1, lambda2));
  }
}

template <class T>
Var<T> mse_loss(Var<T> gz, Var<T> x) {
  if (gz.shape() != x.shape()) {
    throw ShapeError(fmt::format("mse_loss: {} vs {}", to_string(gz.shape()), to_string(x.shape())));
  }
  return mean(square(sub(gz, x)));
}

template <class T>
Var<T> feature_distance(Var<T> features_gz, Var<T> features_x) {
  if (features_gz.shape() != features_x.shape()) {
    throw ShapeError(fmt::format("perceptual_loss: feature shapes {} vs {}", to_string(features_gz.shape()),
                                 to_string(features_x.shape())));
  }
  return mean(square(sub(features_gz, features_x)));
}

template <class T>
Var<T> perceptual_loss(Var<T> gz, Var<T> x, const nn::FeatureExtractorSpec& spec, const nn::BoundParams<T>& extractor) {
  if (gz.shape() != x.shape()) {
    throw ShapeError(fmt::format("perceptual_loss: {} vs {}", to_string(gz.shape()), to_string(x.shape())));
  }
  for (const auto& v : extractor.vars) {
    if (v.requires_grad()) throw std::logic_error("perceptual_loss: feature extractor parameters must be frozen");
  }
  return feature_distance(nn::feature_forward(spec, extractor, gz), nn::feature_forward(spec, extractor, x));
}

template <class T>
Var<T> gradient_penalty(const CriticFn<T>& critic, const Tensor<T>& x, const Tensor<T>& gz, const Tensor<T>& eps,
                        double lambda_gp, Tape<T>& tape) {
  if (!tape.recording()) throw std::logic_error("gradient_penalty: tape must be recording for double backward");
  if (x.shape() != gz.shape() || x.rank() < 2) {
    throw ShapeError(fmt::format("gradient_penalty: {} vs {}", to_string(x.shape()), to_string(gz.shape())));
  }
  const std::size_t batch = x.dim(0);
  if (eps.shape() != Shape{batch}) {
    throw ShapeError(fmt::format("gradient_penalty: need one epsilon per sample, got {} for batch {}",
                                 to_string(eps.shape()), batch));
  }
  const std::size_t inner = x.size() / batch;
  Tensor<T> xhat(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const T e = eps[n];
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t k = n * inner + i;
      xhat[k] = e * x[k] + (T(1) - e) * gz[k];
    }
  }
  Var<T> xv = tape.variable(std::move(xhat));
  Var<T> scores = critic(xv);
  Var<T> g = grad(sum(scores), {xv}, true)[0];
  Var<T> norms = sqrt(add_scalar(sum_per_sample(square(g)), 1e-12));
  return scalar_mul(mean(square(add_scalar(norms, -1.0))), lambda_gp);
}

template <class T>
Var<T> gradient_penalty(const nn::DiscriminatorSpec& spec, const nn::BoundParams<T>& critic, const Tensor<T>& x,
                        const Tensor<T>& gz, const Tensor<T>& eps, double lambda_gp, Tape<T>& tape) {
  CriticFn<T> fn = [&](Var<T> v) { return nn::discriminator_forward(spec, critic, v); };
  return gradient_penalty(fn, x, gz, eps, lambda_gp, tape);
}

namespace {

template <class T>
void require_scores(const char* who, Var<T> a, Var<T> b) {
  if (a.shape().size() != 1 || b.shape().size() != 1) {
    throw ShapeError(fmt::format("{}: scores must be 1-D, got {} and {}", who, to_string(a.shape()),
                                 to_string(b.shape())));
  }
}

template <class T>
bool outside(const Tensor<T>& p) {
  return std::any_of(p.values().begin(), p.values().end(),
                     [](T v) { return !(v >= kGanProbabilityEps && v <= 1.0 - kGanProbabilityEps); });
}

}  // namespace

template <class T>
WganLosses<T> wgan_losses(Var<T> d_of_x, Var<T> d_of_gz, Var<T> penalty) {
  require_scores("wgan_losses", d_of_x, d_of_gz);
  Var<T> gen = scalar_mul(mean(d_of_gz), -1.0);
  return {add(sub(mean(d_of_gz), mean(d_of_x)), penalty), gen};
}

template <class T>
GanLosses<T> gan_losses(Var<T> p_of_x, Var<T> p_of_gz) {
  require_scores("gan_losses", p_of_x, p_of_gz);
  const bool flagged = outside(p_of_x.value()) || outside(p_of_gz.value());
  const double lo = kGanProbabilityEps, hi = 1.0 - kGanProbabilityEps;
  Var<T> px = clamp(p_of_x, lo, hi);
  Var<T> pg = clamp(p_of_gz, lo, hi);
  Var<T> one_minus_pg = add_scalar(scalar_mul(pg, -1.0), 1.0);
  Var<T> d = scalar_mul(add(mean(log(px)), mean(log(one_minus_pg))), -1.0);
  Var<T> g = scalar_mul(mean(log(pg)), -1.0);
  return {d, g, flagged};
}

template <class T>
Var<T> joint_generator_loss(LossKind kind, const LossComponents<T>& c, const LossWeights& w) {
  auto need = [&](const std::optional<Var<T>>& v, const char* what) {
    if (!v) throw std::invalid_argument(fmt::format("{} needs the {} component", to_string(kind), what));
    return *v;
  };
  switch (kind) {
    case LossKind::CnnMse: return need(c.mse, "mse");
    case LossKind::CnnVgg: return need(c.vgg, "vgg");
    case LossKind::WganMse:
      return add(need(c.adversarial, "adversarial"), scalar_mul(need(c.mse, "mse"), w.lambda2));
    case LossKind::WganVgg:
      return add(need(c.adversarial, "adversarial"), scalar_mul(need(c.vgg, "vgg"), w.lambda1));
    case LossKind::Wgan:
    case LossKind::Gan: return need(c.adversarial, "adversarial");
  }
  throw std::invalid_argument("unknown loss kind");
}

template <class T>
WassersteinEstimate wasserstein_estimate(const Tensor<T>& d_of_x, const Tensor<T>& d_of_gz, std::size_t pixels) {
  if (d_of_x.empty() || d_of_gz.empty()) throw std::invalid_argument("wasserstein_estimate: empty batch");
  if (pixels == 0) throw std::invalid_argument("wasserstein_estimate: pixel count must be positive");
  double mx = 0, mg = 0;
  for (T v : d_of_x.values()) mx += v;
  for (T v : d_of_gz.values()) mg += v;
  mx /= static_cast<double>(d_of_x.size());
  mg /= static_cast<double>(d_of_gz.size());
  const double raw = std::abs(mg - mx);
  return {raw, raw / static_cast<double>(pixels)};
}

#define LDCT_INSTANTIATE_LOSSES(T)                                                                                    \
  template Var<T> mse_loss(Var<T>, Var<T>);                                                                           \
  template Var<T> feature_distance(Var<T>, Var<T>);                                                                   \
  template Var<T> perceptual_loss(Var<T>, Var<T>, const nn::FeatureExtractorSpec&, const nn::BoundParams<T>&);        \
  template Var<T> gradient_penalty(const CriticFn<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double, \
                                   Tape<T>&);                                                                         \
  template Var<T> gradient_penalty(const nn::DiscriminatorSpec&, const nn::BoundParams<T>&, const Tensor<T>&,         \
                                   const Tensor<T>&, const Tensor<T>&, double, Tape<T>&);                             \
  template WganLosses<T> wgan_losses(Var<T>, Var<T>, Var<T>);                                                         \
  template GanLosses<T> gan_losses(Var<T>, Var<T>);                                                                   \
  template Var<T> joint_generator_loss(LossKind, const LossComponents<T>&, const LossWeights&);                       \
  template WassersteinEstimate wasserstein_estimate(const Tensor<T>&, const Tensor<T>&, std::size_t);

LDCT_INSTANTIATE_LOSSES(float)
LDCT_INSTANTIATE_LOSSES(double)

}  // namespace ldct::loss
