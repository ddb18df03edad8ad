#include "ldct/adam.hpp"

#include <fmt/format.h>

#include <cmath>

namespace ldct::train {

NonFiniteGradient::NonFiniteGradient(const std::string& parameter, std::size_t component)
    : std::runtime_error(fmt::format("non-finite gradient for '{}' at component {}", parameter, component)),
      parameter_(parameter) {}

template <class T>
AdamState<T> AdamState<T>::zeros_like(const nn::NetworkParams<T>& params) {
  AdamState s;
  for (const auto& [name, t] : params.entries()) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  }
  return s;
}

template <class T>
void adam_step(nn::NetworkParams<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const AdamConfig& c) {
  auto& entries = params.entries();
  if (grads.size() != entries.size() || state.m.size() != entries.size() || state.v.size() != entries.size()) {
    throw std::invalid_argument(fmt::format("adam_step: {} parameters, {} gradients, {} moment tensors",
                                            entries.size(), grads.size(), state.m.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (grads[i].shape() != entries[i].second.shape() || state.m[i].shape() != entries[i].second.shape()) {
      throw ShapeError(fmt::format("adam_step: gradient {} for '{}' has shape {}", to_string(grads[i].shape()),
                                   entries[i].first, to_string(entries[i].second.shape())));
    }
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      if (!std::isfinite(static_cast<double>(grads[i][k]))) throw NonFiniteGradient(entries[i].first, k);
    }
  }
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    T* p = entries[i].second.data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const T* g = grads[i].data();
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      const double gk = g[k];
      const double mk = c.beta1 * m[k] + (1.0 - c.beta1) * gk;
      const double vk = c.beta2 * v[k] + (1.0 - c.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1;
      const double vhat = vk / bc2;
      p[k] = static_cast<T>(p[k] - c.alpha * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(nn::NetworkParams<float>&, const std::vector<Tensor<float>>&, AdamState<float>&,
                        const AdamConfig&);
template void adam_step(nn::NetworkParams<double>&, const std::vector<Tensor<double>>&, AdamState<double>&,
                        const AdamConfig&);

}  // namespace ldct::train
