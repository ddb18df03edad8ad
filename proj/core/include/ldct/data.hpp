#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ldct/ct_sim.hpp"
#include "ldct/tensor.hpp"

namespace ldct::data {

/// Display/normalisation window in HU.
struct Window {
  double hu_min = -1000.0;
  double hu_max = 1000.0;

  void validate() const;
  bool operator==(const Window&) const = default;
};

double normalize_value(double hu, const Window& w);
double denormalize_value(double v, const Window& w);
/// Affine map of [hu_min, hu_max] onto [0, 1], clipping outside.
Tensor<double> normalize(const Tensor<double>& hu, const Window& w);
Tensor<double> denormalize(const Tensor<double>& v, const Window& w);

struct PatchPair {
  Tensor<float> z;  // normalised LDCT, [side, side]
  Tensor<float> x;  // normalised NDCT
  std::uint32_t source_id = 0;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  bool validation = false;

  bool operator==(const PatchPair&) const = default;
};

struct Corpus {
  std::size_t patch_side = 64;
  Window window;
  std::uint64_t seed = 0;
  /// Training pairs first, then validation pairs.
  std::vector<PatchPair> pairs;

  std::size_t n_train() const;
  std::size_t n_validation() const { return pairs.size() - n_train(); }
  bool operator==(const Corpus&) const = default;
};

struct AirRule {
  double air_hu = -300.0;
  /// A patch is rejected when at least this fraction of its NDCT pixels is below air_hu.
  double threshold = 0.75;
};

bool is_mostly_air(const Tensor<double>& ndct_hu, std::size_t row, std::size_t col, std::size_t side,
                   const AirRule& rule);

struct ExtractionResult {
  std::vector<PatchPair> pairs;
  std::size_t rejected = 0;
  /// Patches requested but not found within the attempt budget.
  std::size_t shortfall = 0;
};

/// Uniformly random (image, position) draws from HU image pairs; ids are offset by `first_source_id`.
ExtractionResult extract_patches(const std::vector<ct::ImagePair>& images, std::size_t patch_side,
                                 std::size_t n_patches, const AirRule& rule, const Window& window, std::uint64_t seed,
                                 bool validation = false, std::uint32_t first_source_id = 0);

struct CorpusConfig {
  std::size_t train_images = 40;
  std::size_t validation_images = 8;
  std::size_t train_patches = 2000;
  std::size_t validation_patches = 200;
  std::size_t patch_side = 64;
  std::size_t grid = 256;
  double pixel_size = 0.15;
  double mu_water = ct::kMuWater;
  Window window;
  AirRule air;
  ct::ScanProtocol protocol;
  std::uint64_t seed = 1;
};

struct SimulationReport {
  std::size_t rejected = 0;
  std::size_t shortfall = 0;
  std::size_t clamp_events = 0;
};

/// Slice `index` of a corpus: phantom seed and noise seed are derived from (seed, index).
ct::ImagePair simulate_slice(const CorpusConfig& config, std::size_t index, ct::Phantom* phantom = nullptr);

/// Simulates train and validation slices (disjoint sources) and cuts patches from each.
Corpus simulate_corpus(const CorpusConfig& config, SimulationReport* report = nullptr,
                       const std::function<void(std::size_t done, std::size_t total)>& progress = {});

/// [batch, 1, side, side] stack of the selected pairs' z (ldct) or x (ndct) patches.
template <class T>
Tensor<T> gather(const Corpus& corpus, std::span<const std::size_t> indices, bool ndct);

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus);
Corpus decode_corpus(const std::vector<std::uint8_t>& bytes);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);
std::string corpus_digest(const Corpus& corpus);

}  // namespace ldct::data
