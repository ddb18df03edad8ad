#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "config.hpp"

namespace forge {

namespace fs = std::filesystem;

void cmd_simulate(const ExperimentConfig& config, const fs::path& out);
void cmd_train_features(const ExperimentConfig& config, const fs::path& out);
/// Returns false when training diverged.
bool cmd_train(const ExperimentConfig& config, const fs::path& corpus, ldct::loss::LossKind kind,
               const std::optional<fs::path>& features, const fs::path& out);
void cmd_denoise(const ExperimentConfig& config, const fs::path& weights, const fs::path& input, const fs::path& out);

struct NamedPath {
  std::string name;
  fs::path path;
};
/// Parses NAME=PATH.
NamedPath parse_named_path(const std::string& text);

void cmd_evaluate(const ExperimentConfig& config, const fs::path& ndct, const fs::path& ldct,
                  const std::vector<NamedPath>& methods, const std::vector<NamedPath>& histories, const fs::path& out);
void cmd_feature_maps(const ExperimentConfig& config, const fs::path& features, const fs::path& ndct,
                      const fs::path& ldct, const fs::path& out);
/// simulate, train-features, train every configured kind, evaluate; writes summary.json.
bool cmd_bench(const ExperimentConfig& config, const fs::path& out);

/// Generator architecture recovered from a weights file; rejects files without generator tensors.
ldct::nn::GeneratorSpec generator_spec_from(const ldct::WeightsFile& file);

}  // namespace forge
