#include "app.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include "commands.hpp"
#include "ldct/parallel.hpp"

namespace forge {

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string precision;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out = true) {
  cmd->add_option("--config", c.config, "Experiment configuration (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Overrides the configuration seed");
  auto* out = cmd->add_option("--out", c.out, "Output directory");
  if (needs_out) out->required();
  cmd->add_option("--precision", c.precision, "Arithmetic precision")->check(CLI::IsMember({"f32", "f64"}));
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig config = c.config.empty() ? parse_config(nlohmann::json::object()) : load_config(c.config);
  if (c.seed) config.apply_seed(*c.seed);
  if (!c.precision.empty()) config.precision = c.precision;
  config.validate();
  return config;
}

ldct::loss::LossKind parse_kind(const std::string& text) {
  try {
    return ldct::loss::parse_loss_kind(text);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"Low-dose CT denoising experiments: simulate, train, denoise and evaluate", "ldct_forge"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ldct_forge 0.1.0");

  Common c;
  std::string corpus, kind, weights, input, features, ndct, ldct;
  std::vector<std::string> methods, histories;

  auto* simulate = app.add_subcommand("simulate", "Simulate NDCT/LDCT slices and cut the patch corpus");
  add_common(simulate, c);
  auto* train_features = app.add_subcommand("train-features", "Train the proxy perceptual feature extractor");
  add_common(train_features, c);
  auto* train = app.add_subcommand("train", "Train one network variant on a corpus");
  add_common(train, c);
  train->add_option("--corpus", corpus, "Corpus file from 'simulate'")->required();
  train->add_option("--kind", kind, "cnn-mse|cnn-vgg|wgan-mse|wgan-vgg|wgan|gan")->required();
  train->add_option("--features", features, "Feature extractor weights (required for VGG kinds)");
  auto* denoise = app.add_subcommand("denoise", "Apply a trained generator to whole images");
  add_common(denoise, c);
  denoise->add_option("--weights", weights, "Generator weights")->required();
  denoise->add_option("--input", input, "Image file or directory of image files")->required();
  auto* evaluate = app.add_subcommand("evaluate", "PSNR/SSIM/ROI report and loss curves");
  add_common(evaluate, c);
  evaluate->add_option("--ndct", ndct, "Reference image")->required();
  evaluate->add_option("--ldct", ldct, "Low-dose image")->required();
  evaluate->add_option("--method", methods, "NAME=IMAGE, repeatable");
  evaluate->add_option("--history", histories, "NAME=HISTORY_CSV, repeatable");
  auto* feature_maps = app.add_subcommand("feature-maps", "Tile extractor feature maps of an image pair");
  add_common(feature_maps, c);
  feature_maps->add_option("--features", features, "Feature extractor weights")->required();
  feature_maps->add_option("--ndct", ndct, "Normal-dose image")->required();
  feature_maps->add_option("--ldct", ldct, "Low-dose image")->required();
  auto* bench = app.add_subcommand("bench", "Full study: simulate, train every kind, evaluate");
  add_common(bench, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig config = resolve(c);
    const std::filesystem::path out = c.out;
    if (*simulate) {
      cmd_simulate(config, out);
    } else if (*train_features) {
      cmd_train_features(config, out);
    } else if (*train) {
      const auto k = parse_kind(kind);
      if (!cmd_train(config, corpus, k, features.empty() ? std::nullopt : std::optional<fs::path>(features), out)) {
        return 1;
      }
    } else if (*denoise) {
      cmd_denoise(config, weights, input, out);
    } else if (*evaluate) {
      std::vector<NamedPath> m, h;
      for (const auto& s : methods) m.push_back(parse_named_path(s));
      for (const auto& s : histories) h.push_back(parse_named_path(s));
      cmd_evaluate(config, ndct, ldct, m, h, out);
    } else if (*feature_maps) {
      cmd_feature_maps(config, features, ndct, ldct, out);
    } else if (*bench) {
      if (!cmd_bench(config, out)) return 1;
    }
  } catch (const UsageError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace forge
