#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "ldct/networks.hpp"

namespace ldct::loss {

using ad::Tape;
using ad::Var;

enum class LossKind { CnnMse, CnnVgg, WganMse, WganVgg, Wgan, Gan };

inline constexpr LossKind kAllLossKinds[] = {LossKind::CnnMse,  LossKind::CnnVgg, LossKind::WganMse,
                                             LossKind::WganVgg, LossKind::Wgan,   LossKind::Gan};

std::string_view to_string(LossKind kind);
/// Accepts "cnn-mse", "CNN-MSE", "wgan-vgg", ...
LossKind parse_loss_kind(std::string_view name);

bool uses_critic(LossKind kind);
bool is_wasserstein(LossKind kind);
bool uses_mse(LossKind kind);
bool uses_vgg(LossKind kind);

struct LossWeights {
  double lambda_gp = 10.0;
  double lambda1 = 0.1;
  double lambda2 = 0.1;

  /// Throws std::invalid_argument on a negative weight.
  void validate() const;
};

/// Mean over the batch of ||gz - x||_F^2 / (h w).
template <class T>
Var<T> mse_loss(Var<T> gz, Var<T> x);

/// Mean over the batch of ||phi(gz) - phi(x)||_F^2 / (w h d).
template <class T>
Var<T> perceptual_loss(Var<T> gz, Var<T> x, const nn::FeatureExtractorSpec& spec, const nn::BoundParams<T>& extractor);
/// Same, with the reference features already computed.
template <class T>
Var<T> feature_distance(Var<T> features_gz, Var<T> features_x);

template <class T>
using CriticFn = std::function<Var<T>(Var<T>)>;

/// lambda * mean_i (||grad D(xhat_i)||_2 - 1)^2 with xhat_i = eps_i x_i + (1 - eps_i) gz_i.
/// The interpolants are fresh leaves, so only the critic's parameters receive gradient.
template <class T>
Var<T> gradient_penalty(const CriticFn<T>& critic, const Tensor<T>& x, const Tensor<T>& gz, const Tensor<T>& eps,
                        double lambda_gp, Tape<T>& tape);
template <class T>
Var<T> gradient_penalty(const nn::DiscriminatorSpec& spec, const nn::BoundParams<T>& critic, const Tensor<T>& x,
                        const Tensor<T>& gz, const Tensor<T>& eps, double lambda_gp, Tape<T>& tape);

template <class T>
struct WganLosses {
  Var<T> critic;
  Var<T> generator;
};

/// critic = mean(d_gz) - mean(d_x) + penalty, generator = -mean(d_gz).
template <class T>
WganLosses<T> wgan_losses(Var<T> d_of_x, Var<T> d_of_gz, Var<T> penalty);

template <class T>
struct GanLosses {
  Var<T> discriminator;
  Var<T> generator;
  /// Some probability was outside [eps, 1 - eps] and was clamped.
  bool clamped = false;
};

inline constexpr double kGanProbabilityEps = 1e-7;

/// d = -mean(log p_x) - mean(log(1 - p_gz)); g = -mean(log p_gz).
template <class T>
GanLosses<T> gan_losses(Var<T> p_of_x, Var<T> p_of_gz);

template <class T>
struct LossComponents {
  std::optional<Var<T>> mse;
  std::optional<Var<T>> vgg;
  std::optional<Var<T>> adversarial;
};

/// Generator objective for one network variant.
template <class T>
Var<T> joint_generator_loss(LossKind kind, const LossComponents<T>& components, const LossWeights& weights);

struct WassersteinEstimate {
  double raw = 0.0;
  double normalized = 0.0;
};

/// |mean(d_gz) - mean(d_x)|, and the same divided by the patch pixel count.
template <class T>
WassersteinEstimate wasserstein_estimate(const Tensor<T>& d_of_x, const Tensor<T>& d_of_gz, std::size_t pixels);

}  // namespace ldct::loss
