#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ldct/data.hpp"
#include "ldct/metrics.hpp"
#include "ldct/training.hpp"

namespace forge {

/// Bad flags or configuration; reported with exit status 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FeatureSettings {
  ldct::nn::FeatureMode mode = ldct::nn::FeatureMode::Proxy;
  std::vector<std::size_t> filters{16, 16, 32, 32, 64, 64};
  std::vector<std::size_t> strides{1, 1, 2, 1, 2, 1};
  std::size_t tap_layer = 5;
  std::size_t images = 24;
  std::size_t patches = 1024;
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  double alpha = 1e-3;
};

struct EvaluationSettings {
  std::size_t slices = 10;
  double display_low = -160.0;
  double display_high = 240.0;
  double peak = ldct::metrics::kDefaultPeak;
  /// Empty: use the phantom's flat regions where a phantom is known.
  std::vector<ldct::metrics::RoiSpec> rois;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  ldct::data::CorpusConfig data;
  ldct::train::TrainConfig training;
  std::vector<ldct::loss::LossKind> kinds{std::begin(ldct::loss::kAllLossKinds), std::end(ldct::loss::kAllLossKinds)};
  std::string precision = "f32";
  FeatureSettings features;
  EvaluationSettings evaluation;

  /// Propagates the top-level seed into the module configs.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

/// Strict parse: unknown keys and mistyped values raise UsageError.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);
void write_resolved(const std::filesystem::path& dir, const ExperimentConfig& config);

ldct::nn::FeatureExtractorSpec feature_spec(const FeatureSettings& s);
ldct::train::FeatureTrainConfig feature_train_config(const ExperimentConfig& c);

}  // namespace forge
