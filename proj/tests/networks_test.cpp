#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ldct/autodiff.hpp"
#include "ldct/networks.hpp"
#include "ldct/weights_io.hpp"
#include "test_util.hpp"

using namespace ldct;
using namespace ldct::ad;
using namespace ldct::nn;
using ldct::testing::random_tensor;

namespace {

template <class T>
NetworkParams<T> zeroed(NetworkParams<T> p) {
  for (auto& [name, t] : p.entries()) std::fill(t.values().begin(), t.values().end(), T(0));
  return p;
}

template <class T>
NetworkParams<T> zero_biases(NetworkParams<T> p) {
  for (auto& [name, t] : p.entries()) {
    if (name.ends_with("/b")) std::fill(t.values().begin(), t.values().end(), T(0));
  }
  return p;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ldct_networks_test_" + name);
}

}  // namespace

TEST(Generator, ParameterCountMatchesIndependentCount) {
  // first conv 1->32, six 32->32, last 32->1, 3x3 kernels, one bias per filter
  const std::size_t weights = (1 * 32 + 6 * 32 * 32 + 32 * 1) * 9;
  const std::size_t biases = 7 * 32 + 1;
  EXPECT_EQ(weights, 55872u);
  EXPECT_EQ(weights + biases, 56097u);
  EXPECT_EQ(parameter_count(GeneratorSpec{}), weights + biases);
  EXPECT_EQ(init_params<float>(GeneratorSpec{}, 1).parameter_count(), weights + biases);
}

TEST(Generator, ZeroWeightsGiveZeroOutput) {
  GeneratorSpec spec;
  Tape<float> tape;
  auto p = bind(zeroed(init_params<float>(spec, 3)), tape, false);
  auto y = generator_forward(spec, p, tape.constant(random_tensor<float>({2, 1, 16, 16}, 4)));
  for (float v : y.value().values()) EXPECT_EQ(v, 0.0f);
  auto z = generator_forward(spec, p, tape.constant(Tensor<float>({1, 1, 16, 16})));
  for (float v : z.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Generator, PreservesShapeForAllSidesFromNine) {
  GeneratorSpec spec;
  auto params = init_params<float>(spec, 5);
  for (std::size_t h : {9u, 10u, 13u, 64u}) {
    for (std::size_t w : {9u, 17u}) {
      Tape<float> tape;
      auto y = generator_forward(spec, bind(params, tape, false), tape.constant(random_tensor<float>({2, 1, h, w}, h)));
      EXPECT_EQ(y.shape(), (Shape{2, 1, h, w}));
    }
  }
}

TEST(Generator, RejectsTinyPatchesAndWrongParams) {
  GeneratorSpec spec;
  Tape<float> tape;
  auto p = bind(init_params<float>(spec, 5), tape, false);
  EXPECT_THROW(generator_forward(spec, p, tape.constant(Tensor<float>({1, 1, 8, 8}))), ShapeError);
  EXPECT_THROW(generator_forward(spec, p, tape.constant(Tensor<float>({1, 2, 16, 16}))), ShapeError);
  auto critic = bind(init_params<float>(DiscriminatorSpec{}, 1), tape, false);
  EXPECT_THROW(generator_forward(spec, critic, tape.constant(Tensor<float>({1, 1, 16, 16}))), ShapeError);
}

TEST(Generator, GradientMatchesFiniteDifferences) {
  GeneratorSpec spec{.n_layers = 3, .hidden_filters = 4};
  auto params = init_params<double>(spec, 11);
  std::vector<Tensor<double>> point{random_tensor<double>({2, 1, 9, 9}, 12)};
  for (const auto& e : params.entries()) point.push_back(e.second);
  for (std::size_t i = 2; i < point.size(); i += 2) point[i] = random_tensor<double>(point[i].shape(), i, 0.1, 0.3);
  auto f = [&](Tape<double>&, const std::vector<Var<double>>& v) {
    BoundParams<double> b{"generator", {}, {v.begin() + 1, v.end()}};
    auto y = generator_forward(spec, b, v[0]);
    return mean(square(y));
  };
  auto r = check_gradients<double>(f, point, {.step = 1e-6});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Discriminator, ParameterShapesFollowStrideSchedule) {
  DiscriminatorSpec spec;
  EXPECT_EQ(spec.final_side(), 8u);
  const std::size_t convs = (1 * 64 + 64 * 64 + 64 * 128 + 128 * 128 + 128 * 256 + 256 * 256) * 9 +
                            (64 + 64 + 128 + 128 + 256 + 256);
  const std::size_t fc = 256 * 8 * 8 * 1024 + 1024 + 1024 + 1;
  EXPECT_EQ(parameter_count(spec), convs + fc);
}

TEST(Discriminator, ZeroWeightsGiveZeroScores) {
  DiscriminatorSpec spec{.filters = {4, 4, 8, 8, 8, 8}, .fc_hidden = 16, .input_side = 16};
  Tape<float> tape;
  auto p = bind(zeroed(init_params<float>(spec, 2)), tape, false);
  auto y = discriminator_forward(spec, p, tape.constant(random_tensor<float>({3, 1, 16, 16}, 7)));
  ASSERT_EQ(y.shape(), Shape{3});
  for (float v : y.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(Discriminator, DoublingLastLayerDoublesScore) {
  DiscriminatorSpec spec{.filters = {4, 4, 8, 8, 8, 8}, .fc_hidden = 16, .input_side = 16};
  auto params = init_params<double>(spec, 9);
  auto x = random_tensor<double>({2, 1, 16, 16}, 8);
  Tape<double> tape;
  auto y1 = discriminator_forward(spec, bind(params, tape, false), tape.constant(x)).value();
  for (auto& v : params.at("critic/fc2/w").values()) v *= 2;
  auto y2 = discriminator_forward(spec, bind(params, tape, false), tape.constant(x)).value();
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(y2[i], 2 * y1[i], 1e-12 * std::abs(y1[i]) + 1e-15);
}

TEST(Discriminator, FullSizeScoresOnePerSampleAndHasFiniteInputGradient) {
  DiscriminatorSpec spec;
  Tape<float> tape;
  auto p = bind(init_params<float>(spec, 4), tape, false);
  auto x = tape.variable(random_tensor<float>({2, 1, 64, 64}, 3));
  auto y = discriminator_forward(spec, p, x);
  ASSERT_EQ(y.shape(), Shape{2});
  auto g = gradients(sum(y), {x})[0];
  for (float v : g.values()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Discriminator, RejectsMismatchedPatchSide) {
  DiscriminatorSpec spec;
  Tape<float> tape;
  auto p = bind(init_params<float>(spec, 4), tape, false);
  EXPECT_THROW(discriminator_forward(spec, p, tape.constant(Tensor<float>({1, 1, 32, 32}))), ShapeError);
}

TEST(Discriminator, InputGradientMatchesFiniteDifferences) {
  DiscriminatorSpec spec{.filters = {4, 4, 8, 8, 8, 8}, .fc_hidden = 16, .input_side = 16};
  auto params = init_params<double>(spec, 21);
  auto f = [&](Tape<double>& t, const std::vector<Var<double>>& v) {
    return sum(discriminator_forward(spec, bind(params, t, false), v[0]));
  };
  auto r = check_gradients<double>(f, {random_tensor<double>({2, 1, 16, 16}, 22)}, {.step = 1e-6});
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Discriminator, FullSizeInputGradientMatchesFiniteDifferencesOnSample) {
  DiscriminatorSpec spec;
  auto params = init_params<double>(spec, 23);
  auto f = [&](Tape<double>& t, const std::vector<Var<double>>& v) {
    return sum(discriminator_forward(spec, bind(params, t, false), v[0]));
  };
  auto r = check_gradients<double>(f, {random_tensor<double>({1, 1, 64, 64}, 24)},
                                   {.step = 1e-6, .max_components = 12, .seed = 3});
  EXPECT_EQ(r.checked, 12u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Discriminator, ProbabilityHeadIsSigmoidOfScore) {
  DiscriminatorSpec spec{.filters = {4, 4, 8, 8, 8, 8}, .fc_hidden = 16, .input_side = 16};
  auto params = init_params<double>(spec, 9);
  Tape<double> tape;
  auto b = bind(params, tape, false);
  auto x = tape.constant(random_tensor<double>({2, 1, 16, 16}, 8));
  auto s = discriminator_forward(spec, b, x).value();
  auto p = discriminator_probability(spec, b, x).value();
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(p[i], 1.0 / (1.0 + std::exp(-s[i])), 1e-14);
}

TEST(FeatureExtractor, DeterministicAndTapShape) {
  FeatureExtractorSpec spec;
  auto params = init_params<float>(spec, 6);
  auto img = random_tensor<float>({2, 1, 64, 64}, 1);
  Tape<float> tape;
  auto a = feature_forward(spec, bind(params, tape, false), tape.constant(img)).value();
  auto b = feature_forward(spec, bind(params, tape, false), tape.constant(img)).value();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.shape(), (Shape{2, 64, 16, 16}));
  EXPECT_EQ(spec.feature_shape({2, 1, 64, 64}), a.shape());
}

TEST(FeatureExtractor, ZeroImageWithZeroBiasGivesZeroFeatures) {
  FeatureExtractorSpec spec;
  Tape<float> tape;
  auto p = bind(zero_biases(init_params<float>(spec, 6)), tape, false);
  auto y = feature_forward(spec, p, tape.constant(Tensor<float>({1, 1, 32, 32})));
  for (float v : y.value().values()) EXPECT_EQ(v, 0.0f);
}

TEST(FeatureExtractor, GrayscaleIsDuplicatedToThreeChannels) {
  FeatureExtractorSpec spec;
  auto params = init_params<double>(spec, 6);
  auto img = random_tensor<double>({1, 1, 16, 16}, 2);
  Tensor<double> rgb({1, 3, 16, 16});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 256; ++i) rgb[c * 256 + i] = img[i];
  Tape<double> tape;
  auto a = feature_forward(spec, bind(params, tape, false), tape.constant(img)).value();
  auto b = feature_forward(spec, bind(params, tape, false), tape.constant(rgb)).value();
  EXPECT_EQ(a, b);
}

TEST(FeatureExtractor, FrozenParamsGetNoGradient) {
  FeatureExtractorSpec spec;
  Tape<float> tape;
  auto p = bind(init_params<float>(spec, 6), tape, false);
  auto x = tape.variable(random_tensor<float>({1, 1, 16, 16}, 2));
  auto y = sum(feature_forward(spec, p, x));
  auto all = backward(tape, y.id());
  EXPECT_EQ(all.size(), 1u);
  EXPECT_TRUE(all.count(x.id()));
  for (auto v : p.vars) EXPECT_FALSE(v.requires_grad());
}

TEST(FeatureExtractor, ImportedSpecIsInferredFromWeights) {
  FeatureExtractorSpec spec{.filters = {8, 8, 16}, .strides = {1, 1, 1}, .tap_layer = 2};
  auto params = init_params<float>(spec, 3);
  WeightsFile file{1, "", to_named_tensors(params)};
  auto imported = imported_feature_spec(file);
  EXPECT_EQ(imported.mode, FeatureMode::Imported);
  EXPECT_EQ(imported.filters, spec.filters);
  EXPECT_EQ(imported.tap_layer, 2u);
  EXPECT_EQ(imported.in_channels, 3u);
  check_params(params_from_file<float>(file, "feature"), "feature", imported.shapes());
}

TEST(FeatureExtractor, ProxyHeadOutputsClassScores) {
  FeatureExtractorSpec spec;
  ProxyHeadSpec head{.in_features = 64, .classes = 5};
  Tape<double> tape;
  auto feats = feature_forward(spec, bind(init_params<double>(spec, 1), tape, false),
                               tape.constant(random_tensor<double>({3, 1, 16, 16}, 1)));
  auto y = proxy_head_forward(head, bind(init_params<double>(head, 2), tape, true), feats);
  EXPECT_EQ(y.shape(), (Shape{3, 5}));
}

TEST(Init, DeterministicPerSeed) {
  auto a = init_params<float>(GeneratorSpec{}, 42);
  auto b = init_params<float>(GeneratorSpec{}, 42);
  auto c = init_params<float>(GeneratorSpec{}, 43);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == c);
}

TEST(Init, HeVarianceOnLargeLayers) {
  auto p = init_params<double>(DiscriminatorSpec{}, 7);
  for (const char* name : {"critic/conv4/w", "critic/conv6/w", "critic/fc1/w"}) {
    const auto& t = p.at(name);
    const auto& s = t.shape();
    const double fan_in = s.size() == 4 ? double(s[1] * s[2] * s[3]) : double(s[0]);
    double m = 0, v = 0;
    for (double x : t.values()) m += x;
    m /= double(t.size());
    for (double x : t.values()) v += (x - m) * (x - m);
    v /= double(t.size() - 1);
    EXPECT_NEAR(v, 2.0 / fan_in, 0.2 * 2.0 / fan_in) << name;
  }
  for (double x : p.at("critic/conv1/b").values()) EXPECT_EQ(x, 0.0);
}

TEST(Params, RejectDuplicatesAndShapeMismatch) {
  NetworkParams<float> p("generator");
  p.add("generator/conv1/w", Tensor<float>({1}));
  EXPECT_THROW(p.add("generator/conv1/w", Tensor<float>({1})), std::invalid_argument);
  EXPECT_THROW(check_params(p, "generator", GeneratorSpec{}.shapes()), ShapeError);
  EXPECT_NO_THROW(check_params(init_params<float>(GeneratorSpec{}, 1), "generator", GeneratorSpec{}.shapes()));
}

TEST(WeightsFile, ByteLayoutIsExact) {
  WeightsFile file{1, "", {{"ab", Tensor<float>::from({1.0f, -2.0f}, {2, 1})}}};
  auto bytes = encode_weights(file);
  std::vector<std::uint8_t> expected{'W', 'V', 'G', 'F', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 'a', 'b', 2, 0, 0, 0,
                                     2,   0,   0,   0,   0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0,
                                     0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(bytes, expected);
}

TEST(WeightsFile, RoundTripIsBitExact) {
  auto params = init_params<float>(GeneratorSpec{}, 99);
  auto path = temp_path("roundtrip.wvgf");
  save_params(path, params);
  auto back = load_params<float>(path, "generator");
  EXPECT_EQ(back, params);
  std::filesystem::remove(path);
}

TEST(WeightsFile, VersionTwoCarriesMetadata) {
  WeightsFile file{2, R"({"hu_offset":1000})", {{"image", Tensor<float>({2, 2}, 3.0f)}}};
  auto back = decode_weights(encode_weights(file));
  EXPECT_EQ(back.version, 2u);
  EXPECT_EQ(back.meta_json, file.meta_json);
  EXPECT_EQ(back.at("image"), file.tensors[0].second);
}

TEST(WeightsFile, RejectsCorruptInput) {
  auto bytes = encode_weights({1, "", {{"w", Tensor<float>({3}, 1.0f)}}});
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_weights(bad), WeightsFormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 2);
  EXPECT_THROW(decode_weights(truncated), WeightsFormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_weights(trailing), WeightsFormatError);
  auto version = bytes;
  version[4] = 7;
  EXPECT_THROW(decode_weights(version), WeightsFormatError);
  EXPECT_THROW(read_weights(temp_path("missing.wvgf")), std::runtime_error);
}
