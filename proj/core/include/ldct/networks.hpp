#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ldct/ops.hpp"
#include "ldct/tape.hpp"
#include "ldct/tensor.hpp"
#include "ldct/weights_io.hpp"

namespace ldct::nn {

using ad::Tape;
using ad::Var;

/// Named, ordered weights of one network. Names are "<tag>/<layer>/<w|b>".
template <class T>
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(std::string tag) : tag_(std::move(tag)) {}

  const std::string& tag() const noexcept { return tag_; }
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const noexcept { return entries_; }
  std::vector<std::pair<std::string, Tensor<T>>>& entries() noexcept { return entries_; }

  void add(std::string name, Tensor<T> value);
  bool contains(const std::string& name) const;
  const Tensor<T>& at(const std::string& name) const;
  Tensor<T>& at(const std::string& name);
  std::size_t parameter_count() const;

  template <class U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out(tag_);
    for (const auto& [n, t] : entries_) out.add(n, t.template cast<U>());
    return out;
  }

  bool operator==(const NetworkParams& other) const = default;

 private:
  std::string tag_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

/// Parameters placed on a tape, in the same order as the NetworkParams.
template <class T>
struct BoundParams {
  std::string tag;
  std::vector<std::string> names;
  std::vector<Var<T>> vars;

  Var<T> at(const std::string& name) const;
};

/// Leaves are variables when `trainable`, constants otherwise.
template <class T>
BoundParams<T> bind(const NetworkParams<T>& params, Tape<T>& tape, bool trainable);

using ShapeList = std::vector<std::pair<std::string, Shape>>;

struct GeneratorSpec {
  std::size_t n_layers = 8;
  std::size_t hidden_filters = 32;
  std::size_t kernel = 3;
  std::size_t in_channels = 1;

  static constexpr const char* tag = "generator";
  ShapeList shapes() const;
};

struct DiscriminatorSpec {
  std::vector<std::size_t> filters{64, 64, 128, 128, 256, 256};
  std::vector<std::size_t> strides{1, 2, 1, 2, 1, 2};
  std::size_t kernel = 3;
  double slope = 0.2;
  std::size_t fc_hidden = 1024;
  std::size_t input_side = 64;
  std::size_t in_channels = 1;

  static constexpr const char* tag = "critic";
  std::size_t final_side() const;
  ShapeList shapes() const;
};

enum class FeatureMode { Proxy, Imported };

struct FeatureExtractorSpec {
  FeatureMode mode = FeatureMode::Proxy;
  std::vector<std::size_t> filters{16, 16, 32, 32, 64, 64};
  std::vector<std::size_t> strides{1, 1, 2, 1, 2, 1};
  std::size_t kernel = 3;
  std::size_t in_channels = 3;
  /// Zero-based conv layer whose post-activation output is the feature map.
  std::size_t tap_layer = 5;

  static constexpr const char* tag = "feature";
  ShapeList shapes() const;
  /// Output shape of the tap for a [n, 1, h, w] input.
  Shape feature_shape(const Shape& input) const;
};

/// Classification head used only while training the proxy extractor.
struct ProxyHeadSpec {
  std::size_t in_features = 64;
  std::size_t classes = 6;

  static constexpr const char* tag = "feature_head";
  ShapeList shapes() const;
};

template <class S>
std::size_t parameter_count(const S& spec) {
  std::size_t n = 0;
  for (const auto& [name, shape] : spec.shapes()) n += element_count(shape);
  return n;
}

/// He-normal weights N(0, 2/fan_in), zero biases.
template <class T, class S>
NetworkParams<T> init_params(const S& spec, std::uint64_t seed);

/// Throws ShapeError unless `params` carries exactly the spec's names and shapes.
template <class T>
void check_params(const NetworkParams<T>& params, const std::string& tag, const ShapeList& shapes);

template <class T>
Var<T> generator_forward(const GeneratorSpec& spec, const BoundParams<T>& params, Var<T> z);
template <class T>
Var<T> discriminator_forward(const DiscriminatorSpec& spec, const BoundParams<T>& params, Var<T> x);
/// Critic followed by a sigmoid, for the plain GAN variant.
template <class T>
Var<T> discriminator_probability(const DiscriminatorSpec& spec, const BoundParams<T>& params, Var<T> x);
/// Returns the activations at the tap layer; grayscale input is tiled to the extractor's channels.
template <class T>
Var<T> feature_forward(const FeatureExtractorSpec& spec, const BoundParams<T>& params, Var<T> image);
/// Every post-activation map up to and including the tap.
template <class T>
std::vector<Var<T>> feature_layers(const FeatureExtractorSpec& spec, const BoundParams<T>& params, Var<T> image);
/// Spatial mean of the features followed by a linear map to class fractions.
template <class T>
Var<T> proxy_head_forward(const ProxyHeadSpec& spec, const BoundParams<T>& head, Var<T> features);

/// Infers an imported extractor's filter counts from its weights; strides default to 1.
FeatureExtractorSpec imported_feature_spec(const WeightsFile& file, std::vector<std::size_t> strides = {},
                                           std::size_t tap_layer = SIZE_MAX);

template <class T>
std::vector<NamedTensor> to_named_tensors(const NetworkParams<T>& params);
template <class T>
NetworkParams<T> params_from_file(const WeightsFile& file, const std::string& tag);

template <class T>
void save_params(const std::filesystem::path& path, const NetworkParams<T>& params);
template <class T>
NetworkParams<T> load_params(const std::filesystem::path& path, const std::string& tag);

}  // namespace ldct::nn
