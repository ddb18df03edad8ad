#include "ldct/networks.hpp"

#include <fmt/format.h>

#include <cmath>
#include <random>
#include <set>

namespace ldct::nn {

using namespace ldct::ad;

namespace {

std::string layer_name(const char* tag, const char* kind, std::size_t index, const char* part) {
  return fmt::format("{}/{}{}/{}", tag, kind, index, part);
}

void add_conv(ShapeList& out, const char* tag, std::size_t index, std::size_t in, std::size_t outc, std::size_t k) {
  out.emplace_back(layer_name(tag, "conv", index, "w"), Shape{outc, in, k, k});
  out.emplace_back(layer_name(tag, "conv", index, "b"), Shape{outc});
}

void require_batch(const char* who, const Shape& s, std::size_t channels) {
  if (s.size() != 4 || s[1] != channels) {
    throw ShapeError(fmt::format("{}: expected input [batch, {}, height, width], got {}", who, channels, to_string(s)));
  }
}

}  // namespace

template <class T>
void NetworkParams<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw std::invalid_argument(fmt::format("duplicate parameter name '{}'", name));
  entries_.emplace_back(std::move(name), std::move(value));
}

template <class T>
bool NetworkParams<T>::contains(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return true;
  }
  return false;
}

template <class T>
const Tensor<T>& NetworkParams<T>::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw std::out_of_range(fmt::format("{} parameters have no entry '{}'", tag_, name));
}

template <class T>
Tensor<T>& NetworkParams<T>::at(const std::string& name) {
  return const_cast<Tensor<T>&>(std::as_const(*this).at(name));
}

template <class T>
std::size_t NetworkParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <class T>
Var<T> BoundParams<T>::at(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return vars[i];
  }
  throw std::out_of_range(fmt::format("{} parameters have no entry '{}'", tag, name));
}

template <class T>
BoundParams<T> bind(const NetworkParams<T>& params, Tape<T>& tape, bool trainable) {
  BoundParams<T> out;
  out.tag = params.tag();
  for (const auto& [name, value] : params.entries()) {
    out.names.push_back(name);
    out.vars.push_back(trainable ? tape.variable(value) : tape.constant(value));
  }
  return out;
}

ShapeList GeneratorSpec::shapes() const {
  if (n_layers < 2) throw std::invalid_argument("generator needs at least 2 layers");
  ShapeList out;
  for (std::size_t l = 1; l <= n_layers; ++l) {
    const std::size_t in = l == 1 ? in_channels : hidden_filters;
    const std::size_t o = l == n_layers ? in_channels : hidden_filters;
    add_conv(out, tag, l, in, o, kernel);
  }
  return out;
}

std::size_t DiscriminatorSpec::final_side() const {
  std::size_t side = input_side;
  const std::size_t pad = padding_amount(Padding::Same, kernel);
  for (std::size_t s : strides) side = conv_output_size(side, kernel, s, pad);
  return side;
}

ShapeList DiscriminatorSpec::shapes() const {
  if (filters.size() != strides.size() || filters.empty()) {
    throw std::invalid_argument("critic filters and strides must be non-empty and of equal length");
  }
  ShapeList out;
  std::size_t in = in_channels;
  for (std::size_t l = 0; l < filters.size(); ++l) {
    add_conv(out, tag, l + 1, in, filters[l], kernel);
    in = filters[l];
  }
  const std::size_t side = final_side();
  const std::size_t flat = in * side * side;
  out.emplace_back(layer_name(tag, "fc", 1, "w"), Shape{flat, fc_hidden});
  out.emplace_back(layer_name(tag, "fc", 1, "b"), Shape{fc_hidden});
  out.emplace_back(layer_name(tag, "fc", 2, "w"), Shape{fc_hidden, 1});
  out.emplace_back(layer_name(tag, "fc", 2, "b"), Shape{1});
  return out;
}

ShapeList FeatureExtractorSpec::shapes() const {
  if (filters.size() != strides.size() || filters.empty()) {
    throw std::invalid_argument("feature extractor filters and strides must be non-empty and of equal length");
  }
  if (tap_layer >= filters.size()) {
    throw std::invalid_argument(fmt::format("tap layer {} outside {} conv layers", tap_layer, filters.size()));
  }
  ShapeList out;
  std::size_t in = in_channels;
  for (std::size_t l = 0; l < filters.size(); ++l) {
    add_conv(out, tag, l + 1, in, filters[l], kernel);
    in = filters[l];
  }
  return out;
}

Shape FeatureExtractorSpec::feature_shape(const Shape& input) const {
  require_batch("feature_shape", input, 1);
  const std::size_t pad = padding_amount(Padding::Same, kernel);
  std::size_t h = input[2], w = input[3];
  for (std::size_t l = 0; l <= tap_layer; ++l) {
    h = conv_output_size(h, kernel, strides[l], pad);
    w = conv_output_size(w, kernel, strides[l], pad);
  }
  return {input[0], filters[tap_layer], h, w};
}

ShapeList ProxyHeadSpec::shapes() const {
  return {{std::string(tag) + "/fc1/w", Shape{in_features, classes}},
          {std::string(tag) + "/fc1/b", Shape{classes}}};
}

template <class T, class S>
NetworkParams<T> init_params(const S& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NetworkParams<T> out(S::tag);
  for (auto& [name, shape] : spec.shapes()) {
    Tensor<T> t(shape);
    if (shape.size() > 1) {
      // conv [out, in, k, k] and fc [in, out] both take fan-in from everything but the output axis
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (auto& v : t.values()) v = static_cast<T>(dist(rng));
    }
    out.add(name, std::move(t));
  }
  return out;
}

template <class T>
void check_params(const NetworkParams<T>& params, const std::string& tag, const ShapeList& shapes) {
  if (params.tag() != tag) {
    throw ShapeError(fmt::format("expected {} parameters, got '{}'", tag, params.tag()));
  }
  if (params.size() != shapes.size()) {
    throw ShapeError(fmt::format("{}: expected {} tensors, got {}", tag, shapes.size(), params.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& [name, value] = params.entries()[i];
    if (name != shapes[i].first || value.shape() != shapes[i].second) {
      throw ShapeError(fmt::format("{}: entry {} is '{}' {}, expected '{}' {}", tag, i, name, to_string(value.shape()),
                                   shapes[i].first, to_string(shapes[i].second)));
    }
  }
}

template <class T>
Var<T> generator_forward(const GeneratorSpec& spec, const BoundParams<T>& params, Var<T> z) {
  require_batch("generator_forward", z.shape(), spec.in_channels);
  const std::size_t min_side = spec.kernel * spec.kernel;
  if (z.shape()[2] < min_side || z.shape()[3] < min_side) {
    throw ShapeError(fmt::format("generator_forward: patch {} smaller than {}x{}", to_string(z.shape()), min_side,
                                 min_side));
  }
  if (params.vars.size() != 2 * spec.n_layers) {
    throw ShapeError(fmt::format("generator_forward: expected {} tensors, got {}", 2 * spec.n_layers,
                                 params.vars.size()));
  }
  Var<T> h = z;
  for (std::size_t l = 0; l < spec.n_layers; ++l) {
    h = conv2d(h, params.vars[2 * l], params.vars[2 * l + 1], 1, Padding::Same);
    if (l + 1 < spec.n_layers) h = relu(h);
  }
  return h;
}

template <class T>
Var<T> discriminator_forward(const DiscriminatorSpec& spec, const BoundParams<T>& params, Var<T> x) {
  require_batch("discriminator_forward", x.shape(), spec.in_channels);
  if (x.shape()[2] != spec.input_side || x.shape()[3] != spec.input_side) {
    throw ShapeError(fmt::format("discriminator_forward: input {} does not match the {}x{} patch the head expects",
                                 to_string(x.shape()), spec.input_side, spec.input_side));
  }
  const std::size_t n_conv = spec.filters.size();
  if (params.vars.size() != 2 * n_conv + 4) {
    throw ShapeError(fmt::format("discriminator_forward: expected {} tensors, got {}", 2 * n_conv + 4,
                                 params.vars.size()));
  }
  Var<T> h = x;
  for (std::size_t l = 0; l < n_conv; ++l) {
    h = leaky_relu(conv2d(h, params.vars[2 * l], params.vars[2 * l + 1], spec.strides[l], Padding::Same), spec.slope);
  }
  h = flatten(h);
  h = leaky_relu(bias_add(matmul(h, params.vars[2 * n_conv]), params.vars[2 * n_conv + 1]), spec.slope);
  h = bias_add(matmul(h, params.vars[2 * n_conv + 2]), params.vars[2 * n_conv + 3]);
  return reshape(h, Shape{x.shape()[0]});
}

template <class T>
Var<T> discriminator_probability(const DiscriminatorSpec& spec, const BoundParams<T>& params, Var<T> x) {
  return sigmoid(discriminator_forward(spec, params, x));
}

template <class T>
std::vector<Var<T>> feature_layers(const FeatureExtractorSpec& spec, const BoundParams<T>& params, Var<T> image) {
  const Shape s = image.shape();
  if (s.size() != 4 || (s[1] != 1 && s[1] != spec.in_channels)) {
    throw ShapeError(fmt::format("feature_forward: expected [batch, 1, height, width], got {}", to_string(s)));
  }
  if (params.vars.size() != 2 * spec.filters.size()) {
    throw ShapeError(fmt::format("feature_forward: expected {} tensors, got {}", 2 * spec.filters.size(),
                                 params.vars.size()));
  }
  Var<T> h = s[1] == spec.in_channels ? image : tile_channels(image, spec.in_channels);
  std::vector<Var<T>> out;
  for (std::size_t l = 0; l <= spec.tap_layer; ++l) {
    h = relu(conv2d(h, params.vars[2 * l], params.vars[2 * l + 1], spec.strides[l], Padding::Same));
    out.push_back(h);
  }
  return out;
}

template <class T>
Var<T> feature_forward(const FeatureExtractorSpec& spec, const BoundParams<T>& params, Var<T> image) {
  return feature_layers(spec, params, image).back();
}

template <class T>
Var<T> proxy_head_forward(const ProxyHeadSpec& spec, const BoundParams<T>& head, Var<T> features) {
  const Shape s = features.shape();
  if (s.size() != 4 || s[1] != spec.in_features) {
    throw ShapeError(fmt::format("proxy_head_forward: expected [batch, {}, h, w], got {}", spec.in_features,
                                 to_string(s)));
  }
  const std::size_t pixels = s[2] * s[3];
  Var<T> pooled = sum_per_sample(reshape(features, Shape{s[0] * s[1], pixels}));
  pooled = scalar_mul(reshape(pooled, Shape{s[0], s[1]}), 1.0 / static_cast<double>(pixels));
  return bias_add(matmul(pooled, head.vars.at(0)), head.vars.at(1));
}

FeatureExtractorSpec imported_feature_spec(const WeightsFile& file, std::vector<std::size_t> strides,
                                           std::size_t tap_layer) {
  FeatureExtractorSpec spec;
  spec.mode = FeatureMode::Imported;
  spec.filters.clear();
  for (std::size_t l = 1;; ++l) {
    const std::string w = layer_name(FeatureExtractorSpec::tag, "conv", l, "w");
    if (!file.contains(w)) break;
    const Shape& shape = file.at(w).shape();
    if (shape.size() != 4 || shape[2] != shape[3]) {
      throw ShapeError(fmt::format("imported extractor: '{}' has shape {}", w, to_string(shape)));
    }
    if (l == 1) {
      spec.in_channels = shape[1];
      spec.kernel = shape[2];
    }
    spec.filters.push_back(shape[0]);
  }
  if (spec.filters.empty()) throw WeightsFormatError("imported extractor: no feature/conv1/w tensor");
  spec.strides = strides.empty() ? std::vector<std::size_t>(spec.filters.size(), 1) : std::move(strides);
  spec.tap_layer = tap_layer == SIZE_MAX ? spec.filters.size() - 1 : tap_layer;
  spec.shapes();
  return spec;
}

template <class T>
std::vector<NamedTensor> to_named_tensors(const NetworkParams<T>& params) {
  std::vector<NamedTensor> out;
  for (const auto& [name, value] : params.entries()) out.emplace_back(name, value.template cast<float>());
  return out;
}

template <class T>
NetworkParams<T> params_from_file(const WeightsFile& file, const std::string& tag) {
  NetworkParams<T> out(tag);
  const std::string prefix = tag + "/";
  for (const auto& [name, value] : file.tensors) {
    if (name.compare(0, prefix.size(), prefix) == 0) out.add(name, value.template cast<T>());
  }
  if (out.size() == 0) throw WeightsFormatError(fmt::format("no '{}' tensors in weights file", tag));
  return out;
}

template <class T>
void save_params(const std::filesystem::path& path, const NetworkParams<T>& params) {
  write_weights(path, to_named_tensors(params));
}

template <class T>
NetworkParams<T> load_params(const std::filesystem::path& path, const std::string& tag) {
  return params_from_file<T>(read_weights(path), tag);
}

#define LDCT_INSTANTIATE_NETWORKS(T)                                                                              \
  template class NetworkParams<T>;                                                                                \
  template struct BoundParams<T>;                                                                                 \
  template BoundParams<T> bind(const NetworkParams<T>&, Tape<T>&, bool);                                          \
  template NetworkParams<T> init_params<T, GeneratorSpec>(const GeneratorSpec&, std::uint64_t);                   \
  template NetworkParams<T> init_params<T, DiscriminatorSpec>(const DiscriminatorSpec&, std::uint64_t);           \
  template NetworkParams<T> init_params<T, FeatureExtractorSpec>(const FeatureExtractorSpec&, std::uint64_t);     \
  template NetworkParams<T> init_params<T, ProxyHeadSpec>(const ProxyHeadSpec&, std::uint64_t);                   \
  template void check_params(const NetworkParams<T>&, const std::string&, const ShapeList&);                      \
  template Var<T> generator_forward(const GeneratorSpec&, const BoundParams<T>&, Var<T>);                         \
  template Var<T> discriminator_forward(const DiscriminatorSpec&, const BoundParams<T>&, Var<T>);                 \
  template Var<T> discriminator_probability(const DiscriminatorSpec&, const BoundParams<T>&, Var<T>);             \
  template Var<T> feature_forward(const FeatureExtractorSpec&, const BoundParams<T>&, Var<T>);                    \
  template std::vector<Var<T>> feature_layers(const FeatureExtractorSpec&, const BoundParams<T>&, Var<T>);        \
  template Var<T> proxy_head_forward(const ProxyHeadSpec&, const BoundParams<T>&, Var<T>);                        \
  template std::vector<NamedTensor> to_named_tensors(const NetworkParams<T>&);                                    \
  template NetworkParams<T> params_from_file(const WeightsFile&, const std::string&);                             \
  template void save_params(const std::filesystem::path&, const NetworkParams<T>&);                               \
  template NetworkParams<T> load_params(const std::filesystem::path&, const std::string&);

LDCT_INSTANTIATE_NETWORKS(float)
LDCT_INSTANTIATE_NETWORKS(double)

}  // namespace ldct::nn
