#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ldct/adam.hpp"
#include "ldct/data.hpp"
#include "ldct/losses.hpp"
#include "ldct/networks.hpp"

namespace ldct::train {

using loss::LossKind;

struct TrainConfig {
  LossKind kind = LossKind::CnnMse;
  loss::LossWeights weights;
  AdamConfig adam;
  std::size_t n_epochs = 100;
  std::size_t n_critic = 4;
  std::size_t batch_size = 128;
  /// Samples per tape; gradients of a batch are accumulated over micro-batches.
  std::size_t micro_batch = 16;
  std::size_t checkpoint_every = 10;
  std::filesystem::path checkpoint_dir;
  std::uint64_t seed = 1;
  nn::GeneratorSpec generator;
  /// input_side is taken from the corpus patch side.
  nn::DiscriminatorSpec critic;

  void validate() const;
};

template <class T>
struct Extractor {
  nn::FeatureExtractorSpec spec;
  nn::NetworkParams<T> params;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double mse = 0;
  /// NaN when no feature extractor is available.
  double vgg = 0;
  /// NaN for kinds without a critic.
  double w_raw = 0;
  double w_norm = 0;
  double seconds = 0;

  bool operator==(const EpochRecord&) const = default;
};

struct History {
  std::vector<EpochRecord> records;

  static constexpr const char* kHeader = "epoch,mse,vgg,w_raw,w_norm,seconds";
  std::string to_csv(bool with_seconds = true) const;
  static History from_csv(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static History load(const std::filesystem::path& path);
};

struct Counters {
  std::size_t critic_updates = 0;
  std::size_t generator_updates = 0;
  std::size_t penalty_evaluations = 0;
  /// GAN batches in which a probability had to be clamped.
  std::size_t clamped_batches = 0;
  /// Critic updates performed before each generator update, in order.
  std::vector<std::size_t> critic_updates_per_step;
};

template <class T>
struct TrainResult {
  nn::NetworkParams<T> generator;
  std::optional<nn::NetworkParams<T>> critic;
  AdamState<T> generator_adam;
  std::optional<AdamState<T>> critic_adam;
  History history;
  Counters counters;
  std::vector<std::filesystem::path> checkpoints;
  bool diverged = false;
  std::string message;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains one network variant; see TrainConfig for the schedule.
template <class T>
TrainResult<T> train(const data::Corpus& corpus, const TrainConfig& config, const Extractor<T>* extractor,
                     const EpochCallback& on_epoch = {});

/// MSE, VGG loss and Wasserstein estimate over the whole validation split, without updates.
template <class T>
EpochRecord validate(const data::Corpus& corpus, const nn::GeneratorSpec& gspec, const nn::NetworkParams<T>& generator,
                     const nn::DiscriminatorSpec* cspec, const nn::NetworkParams<T>* critic,
                     const Extractor<T>* extractor, std::size_t chunk = 32);

/// Applies the generator to a batch or a whole image [n, 1, h, w] without recording gradients.
template <class T>
Tensor<T> apply_generator(const nn::GeneratorSpec& spec, const nn::NetworkParams<T>& params, const Tensor<T>& z);

/// Generator and critic weights plus Adam moments, as one weights file.
template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainResult<T>& state, std::size_t epoch);
template <class T>
void load_checkpoint(const std::filesystem::path& path, TrainResult<T>& state, std::size_t* epoch = nullptr);

std::string checkpoint_name(LossKind kind, std::size_t epoch);

/// Tissue classes used as proxy-extractor targets, by clean HU.
inline constexpr double kTissueEdges[] = {-500.0, -30.0, 55.0, 100.0, 200.0};
inline constexpr std::size_t kTissueClasses = 6;
std::size_t tissue_class(double hu);

struct FeatureTrainConfig {
  std::size_t images = 24;
  std::size_t patches = 1024;
  std::size_t epochs = 8;
  std::size_t batch_size = 32;
  double alpha = 1e-3;
  std::uint64_t seed = 7;
  nn::FeatureExtractorSpec spec;
};

template <class T>
struct FeatureTrainResult {
  nn::NetworkParams<T> extractor;
  nn::NetworkParams<T> head;
  /// Mean squared error of predicted class fractions, per epoch.
  std::vector<double> losses;
};

/// Trains the proxy extractor to predict per-patch tissue-class fractions of the clean phantom from NDCT patches.
template <class T>
FeatureTrainResult<T> train_feature_extractor(const FeatureTrainConfig& config, const data::CorpusConfig& simulation);

}  // namespace ldct::train
