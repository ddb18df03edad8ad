#include "commands.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "ldct/digest.hpp"
#include "ldct/image_io.hpp"
#include "ldct/ops.hpp"
#include "svg_plot.hpp"

namespace forge {

using nlohmann::json;
using namespace ldct;

namespace {

template <class F>
decltype(auto) with_precision(const std::string& precision, F&& f) {
  if (precision == "f64") return f.template operator()<double>();
  return f.template operator()<float>();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) throw std::runtime_error(fmt::format("error writing {}", path.string()));
}

void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) throw UsageError(fmt::format("{} not found: {}", what, path.string()));
}

std::string preview_name(std::size_t i, const char* kind) { return fmt::format("slice{:03}_{}", i, kind); }

template <class T>
Tensor<double> denoise_hu(const nn::GeneratorSpec& spec, const nn::NetworkParams<T>& params, const Tensor<double>& hu,
                          const data::Window& window) {
  const Tensor<double> z = data::normalize(hu, window);
  const Tensor<T> in = z.template cast<T>().reshaped({1, 1, hu.dim(0), hu.dim(1)});
  const Tensor<T> gz = train::apply_generator(spec, params, in);
  return data::denormalize(gz.template cast<double>().reshaped(hu.shape()), window);
}

template <class T>
train::Extractor<T> load_extractor(const ExperimentConfig& config, const fs::path& path) {
  require_file(path, "feature extractor weights");
  const WeightsFile file = read_weights(path);
  std::vector<std::size_t> strides = config.features.strides;
  std::size_t tap = config.features.tap_layer;
  nn::FeatureMode mode = config.features.mode;
  if (!file.meta_json.empty()) {
    const json meta = json::parse(file.meta_json);
    if (meta.contains("strides")) strides = meta["strides"].get<std::vector<std::size_t>>();
    if (meta.contains("tap_layer")) tap = meta["tap_layer"].get<std::size_t>();
    if (meta.value("mode", "") == "proxy") mode = nn::FeatureMode::Proxy;
  }
  nn::FeatureExtractorSpec spec = nn::imported_feature_spec(file, strides, tap);
  spec.mode = mode;
  return {spec, nn::params_from_file<T>(file, nn::FeatureExtractorSpec::tag)};
}

std::vector<fs::path> image_inputs(const fs::path& input) {
  if (!fs::exists(input)) throw UsageError(fmt::format("input not found: {}", input.string()));
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && e.path().extension() == ".wvgf") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw UsageError(fmt::format("no .wvgf images in {}", input.string()));
  return out;
}

void write_curves(const fs::path& out, const std::vector<std::pair<std::string, train::History>>& histories) {
  struct Curve {
    const char* file;
    const char* title;
    double train::EpochRecord::*field;
  };
  const Curve curves[] = {{"mse.svg", "Validation MSE", &train::EpochRecord::mse},
                          {"vgg.svg", "Validation VGG loss", &train::EpochRecord::vgg},
                          {"wdist.svg", "Wasserstein estimate", &train::EpochRecord::w_raw}};
  for (const auto& c : curves) {
    std::vector<Series> series;
    for (const auto& [name, h] : histories) {
      Series s{name, {}, {}};
      for (const auto& r : h.records) {
        s.x.push_back(static_cast<double>(r.epoch));
        s.y.push_back(r.*c.field);
      }
      series.push_back(std::move(s));
    }
    write_text(out / c.file, line_chart(c.title, "epoch", c.title, series));
  }
}

std::vector<metrics::RoiSpec> rois_for(const ExperimentConfig& config, const ct::Phantom* phantom) {
  if (!config.evaluation.rois.empty() || phantom == nullptr) return config.evaluation.rois;
  std::vector<metrics::RoiSpec> out;
  for (std::size_t i = 0; i < phantom->flat_rois.size(); ++i) {
    out.push_back(metrics::roi_rect(*phantom, phantom->flat_rois[i], fmt::format("ROI {}", i + 1)));
  }
  return out;
}

data::CorpusConfig evaluation_slices(const ExperimentConfig& config) {
  data::CorpusConfig c = config.data;
  c.seed = ct::derive_seed(config.seed, 4242);
  return c;
}

}  // namespace

nn::GeneratorSpec generator_spec_from(const WeightsFile& file) {
  nn::GeneratorSpec spec;
  if (!file.contains("generator/conv1/w")) {
    throw WeightsFormatError("architecture tag mismatch: the weights file holds no generator network");
  }
  const Shape& first = file.at("generator/conv1/w").shape();
  if (first.size() != 4) throw WeightsFormatError("generator/conv1/w must have rank 4");
  spec.hidden_filters = first[0];
  spec.in_channels = first[1];
  spec.kernel = first[2];
  spec.n_layers = 0;
  while (file.contains(fmt::format("generator/conv{}/w", spec.n_layers + 1))) ++spec.n_layers;
  nn::check_params(nn::params_from_file<float>(file, nn::GeneratorSpec::tag), nn::GeneratorSpec::tag, spec.shapes());
  return spec;
}

void cmd_simulate(const ExperimentConfig& config, const fs::path& out) {
  fs::create_directories(out);
  write_resolved(out, config);
  if (config.data.train_patches + config.data.validation_patches == 0) {
    fmt::print(stderr, "warning: train_patches and validation_patches are 0; writing an empty corpus\n");
  }
  data::SimulationReport report;
  const data::Corpus corpus = data::simulate_corpus(config.data, &report, [](std::size_t done, std::size_t total) {
    fmt::print(stderr, "\rsimulating slice {}/{}", done, total);
    if (done == total) fmt::print(stderr, "\n");
  });
  const fs::path corpus_path = out / "corpus.wvgf";
  data::save_corpus(corpus, corpus_path);
  if (config.data.train_images > 0) fs::create_directories(out / "previews");
  for (std::size_t i = 0; i < std::min<std::size_t>(2, config.data.train_images); ++i) {
    const ct::ImagePair pair = data::simulate_slice(config.data, i);
    io::write_image(out / "previews" / (preview_name(i, "ndct") + ".wvgf"), pair.ndct);
    io::write_image(out / "previews" / (preview_name(i, "ldct") + ".wvgf"), pair.ldct);
    io::write_png(out / "previews" / (preview_name(i, "ndct") + ".png"), pair.ndct, config.evaluation.display_low,
                  config.evaluation.display_high);
    io::write_png(out / "previews" / (preview_name(i, "ldct") + ".png"), pair.ldct, config.evaluation.display_low,
                  config.evaluation.display_high);
  }
  const json manifest = {{"seed", config.seed},
                         {"corpus", "corpus.wvgf"},
                         {"corpus_digest", data::corpus_digest(corpus)},
                         {"file_sha256", sha256_file(corpus_path)},
                         {"n_train", corpus.n_train()},
                         {"n_validation", corpus.n_validation()},
                         {"patch_side", corpus.patch_side},
                         {"rejected_patches", report.rejected},
                         {"shortfall", report.shortfall},
                         {"clamped_measurements", report.clamp_events}};
  write_text(out / "manifest.json", manifest.dump(2) + "\n");
  if (report.shortfall > 0) fmt::print(stderr, "warning: {} patches could not be drawn\n", report.shortfall);
  fmt::print(stderr, "corpus: {} training, {} validation pairs\n", corpus.n_train(), corpus.n_validation());
}

void cmd_train_features(const ExperimentConfig& config, const fs::path& out) {
  fs::create_directories(out);
  write_resolved(out, config);
  with_precision(config.precision, [&]<class T>() {
    const auto ftc = feature_train_config(config);
    const auto r = train::train_feature_extractor<T>(ftc, config.data);
    const json meta = {{"mode", "proxy"}, {"strides", ftc.spec.strides}, {"tap_layer", ftc.spec.tap_layer}};
    write_weights(out / "features.wvgf", nn::to_named_tensors(r.extractor), meta.dump());
    nn::save_params(out / "feature_head.wvgf", r.head);
    std::string csv = "epoch,loss\n";
    for (std::size_t i = 0; i < r.losses.size(); ++i) csv += fmt::format("{},{}\n", i + 1, r.losses[i]);
    write_text(out / "losses.csv", csv);
    if (!r.losses.empty()) fmt::print(stderr, "feature extractor: final loss {:.6g}\n", r.losses.back());
  });
}

bool cmd_train(const ExperimentConfig& config, const fs::path& corpus_path, loss::LossKind kind,
               const std::optional<fs::path>& features, const fs::path& out) {
  require_file(corpus_path, "corpus");
  if (loss::uses_vgg(kind) && !features) {
    throw UsageError(fmt::format("{} needs --features (a feature extractor weights file)", loss::to_string(kind)));
  }
  fs::create_directories(out);
  write_resolved(out, config);
  const data::Corpus corpus = data::load_corpus(corpus_path);
  train::TrainConfig tc = config.training;
  tc.kind = kind;
  tc.checkpoint_dir = out / "checkpoints";
  return with_precision(config.precision, [&]<class T>() {
    std::optional<train::Extractor<T>> extractor;
    if (features) extractor = load_extractor<T>(config, *features);
    auto result = train::train<T>(corpus, tc, extractor ? &*extractor : nullptr, [&](const train::EpochRecord& r) {
      fmt::print(stderr, "{} epoch {:>3}: mse {:.6g} vgg {:.6g} w {:.6g} ({:.1f}s)\n", loss::to_string(kind), r.epoch,
                 r.mse, r.vgg, r.w_raw, r.seconds);
    });
    result.history.save(out / "history.csv");
    nn::save_params(out / "generator.wvgf", result.generator);
    if (result.critic) nn::save_params(out / "critic.wvgf", *result.critic);
    const json counters = {{"generator_updates", result.counters.generator_updates},
                           {"critic_updates", result.counters.critic_updates},
                           {"penalty_evaluations", result.counters.penalty_evaluations},
                           {"clamped_batches", result.counters.clamped_batches},
                           {"diverged", result.diverged},
                           {"message", result.message}};
    write_text(out / "counters.json", counters.dump(2) + "\n");
    if (result.diverged) fmt::print(stderr, "error: {}\n", result.message);
    return !result.diverged;
  });
}

void cmd_denoise(const ExperimentConfig& config, const fs::path& weights, const fs::path& input, const fs::path& out) {
  require_file(weights, "generator weights");
  const WeightsFile file = read_weights(weights);
  const nn::GeneratorSpec spec = generator_spec_from(file);
  const auto inputs = image_inputs(input);
  fs::create_directories(out);
  with_precision(config.precision, [&]<class T>() {
    const auto params = nn::params_from_file<T>(file, nn::GeneratorSpec::tag);
    for (const auto& path : inputs) {
      const Tensor<double> hu = io::read_image(path);
      if (hu.dim(0) < spec.kernel * spec.kernel || hu.dim(1) < spec.kernel * spec.kernel) {
        throw std::runtime_error(fmt::format("{} is smaller than {}x{}", path.string(), spec.kernel * spec.kernel,
                                             spec.kernel * spec.kernel));
      }
      const Tensor<double> den = denoise_hu(spec, params, hu, config.data.window);
      const std::string stem = path.stem().string() + "_denoised";
      io::write_image(out / (stem + ".wvgf"), den);
      io::write_png(out / (stem + ".png"), den, config.evaluation.display_low, config.evaluation.display_high);
    }
  });
  fmt::print(stderr, "denoised {} image(s)\n", inputs.size());
}

NamedPath parse_named_path(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
    throw UsageError(fmt::format("expected NAME=PATH, got '{}'", text));
  }
  return {text.substr(0, eq), text.substr(eq + 1)};
}

void cmd_evaluate(const ExperimentConfig& config, const fs::path& ndct, const fs::path& ldct,
                  const std::vector<NamedPath>& methods, const std::vector<NamedPath>& histories, const fs::path& out) {
  require_file(ndct, "reference (NDCT) image");
  require_file(ldct, "LDCT image");
  for (const auto& m : methods) require_file(m.path, fmt::format("image for method '{}'", m.name).c_str());
  for (const auto& h : histories) require_file(h.path, fmt::format("history for '{}'", h.name).c_str());
  fs::create_directories(out);
  write_resolved(out, config);
  std::vector<std::pair<std::string, Tensor<double>>> images;
  for (const auto& m : methods) images.emplace_back(m.name, io::read_image(m.path));
  metrics::EvalOptions opts;
  opts.peak = config.evaluation.peak;
  opts.ssim.peak = config.evaluation.peak;
  const auto report =
      metrics::evaluate_methods(images, io::read_image(ndct), io::read_image(ldct), config.evaluation.rois, opts);
  write_text(out / "report.csv", report.to_csv());
  write_text(out / "report.txt", report.to_table());
  if (!histories.empty()) {
    std::vector<std::pair<std::string, train::History>> loaded;
    for (const auto& h : histories) loaded.emplace_back(h.name, train::History::load(h.path));
    write_curves(out, loaded);
  }
  fmt::print("{}", report.to_table());
}

void cmd_feature_maps(const ExperimentConfig& config, const fs::path& features, const fs::path& ndct,
                      const fs::path& ldct, const fs::path& out) {
  require_file(ndct, "NDCT image");
  require_file(ldct, "LDCT image");
  const auto ex = load_extractor<double>(config, features);
  fs::create_directories(out);
  auto maps = [&](const fs::path& path) {
    const Tensor<double> hu = io::read_image(path);
    const Tensor<double> z = data::normalize(hu, config.data.window).reshaped({1, 1, hu.dim(0), hu.dim(1)});
    ad::Tape<double> tape;
    ad::NoGradScope<double> guard(tape);
    auto bound = nn::bind(ex.params, tape, false);
    return tape.take_value(nn::feature_forward(ex.spec, bound, tape.constant(z)).id());
  };
  const Tensor<double> a = maps(ndct), b = maps(ldct);
  if (a.shape() != b.shape()) throw ShapeError("feature-maps: the two images differ in size");
  const std::size_t d = a.dim(1), h = a.dim(2), w = a.dim(3);
  std::vector<Tensor<double>> ta, tb, tdiff;
  double max_diff = 0;
  for (std::size_t c = 0; c < d; ++c) {
    Tensor<double> x({h, w}), y({h, w}), diff({h, w});
    for (std::size_t i = 0; i < h * w; ++i) {
      x[i] = a[c * h * w + i];
      y[i] = b[c * h * w + i];
      diff[i] = std::abs(x[i] - y[i]);
      max_diff = std::max(max_diff, diff[i]);
    }
    ta.push_back(std::move(x));
    tb.push_back(std::move(y));
    tdiff.push_back(std::move(diff));
  }
  const auto columns = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
  io::write_png(out / "ndct_features.png", io::tile_grid(ta, columns), 0.0, 1.0);
  io::write_png(out / "ldct_features.png", io::tile_grid(tb, columns), 0.0, 1.0);
  io::write_png(out / "difference.png", io::tile_grid(tdiff, columns), 0.0, 1.0);
  const json info = {{"channels", d},       {"tile_height", h},     {"tile_width", w},
                     {"columns", columns},  {"tiles", ta.size()},   {"max_abs_difference", max_diff}};
  write_text(out / "feature_maps.json", info.dump(2) + "\n");
}

bool cmd_bench(const ExperimentConfig& config, const fs::path& out) {
  fs::create_directories(out);
  write_resolved(out, config);
  cmd_simulate(config, out / "data");
  const fs::path corpus = out / "data" / "corpus.wvgf";
  cmd_train_features(config, out / "features");
  const fs::path features = out / "features" / "features.wvgf";

  bool ok = true;
  json kinds = json::object();
  std::vector<std::pair<std::string, train::History>> histories;
  std::map<std::string, std::pair<nn::GeneratorSpec, nn::NetworkParams<double>>> generators;
  for (auto kind : config.kinds) {
    const std::string name(loss::to_string(kind));
    const fs::path dir = out / name;
    const bool trained = cmd_train(config, corpus, kind, features, dir);
    ok = ok && trained;
    const auto history = train::History::load(dir / "history.csv");
    const auto csv = history.to_csv(false);
    json w = json::array();
    for (const auto& r : history.records) w.push_back(std::isnan(r.w_raw) ? json(nullptr) : json(r.w_raw));
    json entry = {{"diverged", !trained},
                  {"epochs", history.records.size()},
                  {"history_digest", sha256_hex(std::vector<std::uint8_t>(csv.begin(), csv.end()))},
                  {"generator_digest", sha256_file(dir / "generator.wvgf")},
                  {"w_raw", w}};
    if (!history.records.empty()) {
      const auto& last = history.records.back();
      entry["final_mse"] = last.mse;
      entry["final_vgg"] = std::isnan(last.vgg) ? json(nullptr) : json(last.vgg);
    }
    if (fs::exists(dir / "critic.wvgf")) entry["critic_digest"] = sha256_file(dir / "critic.wvgf");
    kinds[name] = entry;
    histories.emplace_back(name, history);
    const WeightsFile file = read_weights(dir / "generator.wvgf");
    generators.emplace(name, std::pair(generator_spec_from(file), nn::params_from_file<double>(file, "generator")));
  }
  write_curves(out, histories);

  const data::CorpusConfig eval_cfg = evaluation_slices(config);
  metrics::EvalOptions opts;
  opts.peak = config.evaluation.peak;
  opts.ssim.peak = config.evaluation.peak;
  json slices = json::array();
  std::map<std::string, std::pair<double, double>> sums;
  std::string combined;
  for (std::size_t i = 0; i < config.evaluation.slices; ++i) {
    ct::Phantom phantom;
    const ct::ImagePair pair = data::simulate_slice(eval_cfg, i, &phantom);
    std::vector<std::pair<std::string, Tensor<double>>> methods;
    for (const auto& [name, g] : generators) {
      methods.emplace_back(name, denoise_hu(g.first, g.second, pair.ldct, config.data.window));
    }
    const auto rois = rois_for(config, &phantom);
    const auto report = metrics::evaluate_methods(methods, pair.ndct, pair.ldct, rois, opts);
    const fs::path dir = out / "evaluation" / fmt::format("slice{:03}", i);
    write_text(dir / "report.csv", report.to_csv());
    combined += fmt::format("slice {}\n{}\n", i, report.to_table());
    io::write_png(dir / "ndct.png", pair.ndct, config.evaluation.display_low, config.evaluation.display_high);
    io::write_png(dir / "ldct.png", pair.ldct, config.evaluation.display_low, config.evaluation.display_high);
    for (const auto& [name, img] : methods) {
      io::write_png(dir / (name + ".png"), img, config.evaluation.display_low, config.evaluation.display_high);
    }
    json row = {{"index", i}, {"psnr", json::object()}, {"ssim", json::object()}, {"roi_sd", json::object()}};
    if (!rois.empty()) row["roi_sd"]["NDCT"] = metrics::roi_stats(pair.ndct, rois[0]).sd;
    for (const auto& r : report.rows) {
      row["psnr"][r.method] = r.psnr.db;
      row["ssim"][r.method] = r.ssim;
      if (!r.rois.empty()) row["roi_sd"][r.method] = r.rois[0].sd;
      sums[r.method].first += r.psnr.db;
      sums[r.method].second += r.ssim;
    }
    slices.push_back(row);
  }
  write_text(out / "evaluation" / "report.txt", combined);
  json means = json::object();
  const double n = static_cast<double>(std::max<std::size_t>(1, config.evaluation.slices));
  for (const auto& [name, s] : sums) means[name] = {{"psnr", s.first / n}, {"ssim", s.second / n}};

  const json summary = {{"seed", config.seed},
                        {"config", to_json(config)},
                        {"corpus_digest", data::corpus_digest(data::load_corpus(corpus))},
                        {"features_digest", sha256_file(features)},
                        {"kinds", kinds},
                        {"evaluation", {{"means", means}, {"slices", slices}}}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  return ok;
}

}  // namespace forge
