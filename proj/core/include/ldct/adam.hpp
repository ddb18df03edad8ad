#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ldct/networks.hpp"

namespace ldct::train {

struct AdamConfig {
  double alpha = 1e-5;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const nn::NetworkParams<T>& params);
  bool operator==(const AdamState&) const = default;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& parameter, std::size_t component);
  const std::string& parameter() const noexcept { return parameter_; }

 private:
  std::string parameter_;
};

/// Bias-corrected Adam. Every gradient is checked before anything is modified.
template <class T>
void adam_step(nn::NetworkParams<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& state,
               const AdamConfig& config);

}  // namespace ldct::train
