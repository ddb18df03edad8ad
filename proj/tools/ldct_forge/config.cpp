#include "config.hpp"

#include <fmt/format.h>

#include <fstream>
#include <set>
#include <type_traits>

namespace forge {

using nlohmann::json;
using namespace ldct;

namespace {

class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError(fmt::format("config: '{}' must be an object", path_));
  }

  template <class V>
  void get(const std::string& key, V& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!v.is_boolean()) fail(key, "a boolean");
    } else if constexpr (std::is_unsigned_v<V>) {
      if (!v.is_number_unsigned()) fail(key, "a non-negative integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!v.is_number()) fail(key, "a number");
    } else if constexpr (std::is_same_v<V, std::string>) {
      if (!v.is_string()) fail(key, "a string");
    } else if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
      if (!v.is_array()) fail(key, "an array of non-negative integers");
      for (const auto& e : v)
        if (!e.is_number_unsigned()) fail(key, "an array of non-negative integers");
    }
    out = v.get<V>();
  }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(j_.contains(key) ? j_.at(key) : empty(), path_.empty() ? key : path_ + "." + key);
  }
  bool has(const std::string& key) const { return j_.contains(key); }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  std::string path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) throw UsageError(fmt::format("config: unknown key '{}'", path(k)));
    }
  }

 private:
  [[noreturn]] void fail(const std::string& key, const char* what) const {
    throw UsageError(fmt::format("config: '{}' must be {}", path(key), what));
  }
  static const json& empty() {
    static const json e = json::object();
    return e;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::string mode_name(nn::FeatureMode m) { return m == nn::FeatureMode::Proxy ? "proxy" : "imported"; }

}  // namespace

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  training.seed = ct::derive_seed(s, 3);
}

void ExperimentConfig::validate() const {
  try {
    data.window.validate();
    data.protocol.validate();
    training.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(fmt::format("config: {}", e.what()));
  }
  if (precision != "f32" && precision != "f64") throw UsageError("config: precision must be f32 or f64");
  if (kinds.empty()) throw UsageError("config: training.kinds must not be empty");
  if (data.patch_side < training.generator.kernel * training.generator.kernel) {
    throw UsageError(fmt::format("config: patch_side must be at least {}", training.generator.kernel * training.generator.kernel));
  }
  if (data.patch_side > data.grid) throw UsageError("config: patch_side exceeds the simulation grid");
  if (training.critic.filters.size() != training.critic.strides.size() || training.critic.filters.empty()) {
    throw UsageError("config: critic filters and strides must have the same non-zero length");
  }
  if (features.filters.size() != features.strides.size() || features.tap_layer >= features.filters.size()) {
    throw UsageError("config: feature filters/strides must match and tap_layer must index a layer");
  }
  if (!(evaluation.display_high > evaluation.display_low)) throw UsageError("config: empty display window");
  if (!(evaluation.peak > 0)) throw UsageError("config: evaluation.peak must be positive");
  if (!(data.air.threshold > 0 && data.air.threshold <= 1)) throw UsageError("config: air_threshold must be in (0, 1]");
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig c;
  Section root(doc, "");
  std::uint64_t seed = c.seed;
  root.get("seed", seed);

  {
    Section s = root.child("simulation");
    s.get("grid", c.data.grid);
    s.get("pixel_size", c.data.pixel_size);
    s.get("mu_water", c.data.mu_water);
    s.get("n_views", c.data.protocol.n_views);
    s.get("n_detectors", c.data.protocol.n_detectors);
    s.get("incident_photons", c.data.protocol.incident_photons);
    s.get("electronic_sigma", c.data.protocol.electronic_sigma);
    s.finish();
  }
  {
    Section s = root.child("data");
    s.get("train_images", c.data.train_images);
    s.get("validation_images", c.data.validation_images);
    s.get("train_patches", c.data.train_patches);
    s.get("validation_patches", c.data.validation_patches);
    s.get("patch_side", c.data.patch_side);
    s.get("hu_min", c.data.window.hu_min);
    s.get("hu_max", c.data.window.hu_max);
    s.get("air_hu", c.data.air.air_hu);
    s.get("air_threshold", c.data.air.threshold);
    s.finish();
  }
  {
    Section s = root.child("training");
    auto& t = c.training;
    if (s.has("kinds")) {
      const json& k = s.raw("kinds");
      if (!k.is_array()) throw UsageError("config: 'training.kinds' must be an array of strings");
      c.kinds.clear();
      for (const auto& e : k) {
        if (!e.is_string()) throw UsageError("config: 'training.kinds' must be an array of strings");
        try {
          c.kinds.push_back(loss::parse_loss_kind(e.get<std::string>()));
        } catch (const std::invalid_argument& err) {
          throw UsageError(fmt::format("config: {}", err.what()));
        }
      }
    }
    s.get("n_epochs", t.n_epochs);
    s.get("n_critic", t.n_critic);
    s.get("batch_size", t.batch_size);
    s.get("micro_batch", t.micro_batch);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("lambda_gp", t.weights.lambda_gp);
    s.get("lambda1", t.weights.lambda1);
    s.get("lambda2", t.weights.lambda2);
    s.get("alpha", t.adam.alpha);
    s.get("beta1", t.adam.beta1);
    s.get("beta2", t.adam.beta2);
    s.get("epsilon", t.adam.eps);
    s.get("precision", c.precision);
    {
      Section g = s.child("generator");
      g.get("n_layers", t.generator.n_layers);
      g.get("hidden_filters", t.generator.hidden_filters);
      g.get("kernel", t.generator.kernel);
      g.finish();
    }
    {
      Section d = s.child("critic");
      d.get("filters", t.critic.filters);
      d.get("strides", t.critic.strides);
      d.get("kernel", t.critic.kernel);
      d.get("slope", t.critic.slope);
      d.get("fc_hidden", t.critic.fc_hidden);
      d.finish();
    }
    {
      Section f = s.child("features");
      std::string mode = mode_name(c.features.mode);
      f.get("mode", mode);
      if (mode == "proxy") {
        c.features.mode = nn::FeatureMode::Proxy;
      } else if (mode == "imported") {
        c.features.mode = nn::FeatureMode::Imported;
      } else {
        throw UsageError("config: 'training.features.mode' must be proxy or imported");
      }
      f.get("filters", c.features.filters);
      f.get("strides", c.features.strides);
      f.get("tap_layer", c.features.tap_layer);
      f.get("images", c.features.images);
      f.get("patches", c.features.patches);
      f.get("epochs", c.features.epochs);
      f.get("batch_size", c.features.batch_size);
      f.get("alpha", c.features.alpha);
      f.finish();
    }
    s.finish();
  }
  {
    Section s = root.child("evaluation");
    s.get("slices", c.evaluation.slices);
    s.get("peak", c.evaluation.peak);
    if (s.has("display_window")) {
      const json& w = s.raw("display_window");
      if (!w.is_array() || w.size() != 2 || !w[0].is_number() || !w[1].is_number()) {
        throw UsageError("config: 'evaluation.display_window' must be [low, high]");
      }
      c.evaluation.display_low = w[0].get<double>();
      c.evaluation.display_high = w[1].get<double>();
    }
    if (s.has("rois")) {
      const json& rois = s.raw("rois");
      if (!rois.is_array()) throw UsageError("config: 'evaluation.rois' must be an array");
      for (std::size_t i = 0; i < rois.size(); ++i) {
        Section r(rois[i], fmt::format("evaluation.rois[{}]", i));
        metrics::RoiSpec roi;
        roi.label = fmt::format("ROI {}", i + 1);
        r.get("row", roi.row);
        r.get("col", roi.col);
        r.get("height", roi.height);
        r.get("width", roi.width);
        r.get("label", roi.label);
        r.finish();
        c.evaluation.rois.push_back(roi);
      }
    }
    s.finish();
  }
  root.finish();
  c.apply_seed(seed);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError(fmt::format("cannot read config {}", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(fmt::format("config {}: {}", path.string(), e.what()));
  }
  return parse_config(doc);
}

json to_json(const ExperimentConfig& c) {
  const auto& t = c.training;
  json kinds = json::array();
  for (auto k : c.kinds) kinds.push_back(std::string(loss::to_string(k)));
  json rois = json::array();
  for (const auto& r : c.evaluation.rois) {
    rois.push_back({{"row", r.row}, {"col", r.col}, {"height", r.height}, {"width", r.width}, {"label", r.label}});
  }
  return {
      {"seed", c.seed},
      {"simulation",
       {{"grid", c.data.grid},
        {"pixel_size", c.data.pixel_size},
        {"mu_water", c.data.mu_water},
        {"n_views", c.data.protocol.n_views},
        {"n_detectors", c.data.protocol.n_detectors},
        {"incident_photons", c.data.protocol.incident_photons},
        {"electronic_sigma", c.data.protocol.electronic_sigma}}},
      {"data",
       {{"train_images", c.data.train_images},
        {"validation_images", c.data.validation_images},
        {"train_patches", c.data.train_patches},
        {"validation_patches", c.data.validation_patches},
        {"patch_side", c.data.patch_side},
        {"hu_min", c.data.window.hu_min},
        {"hu_max", c.data.window.hu_max},
        {"air_hu", c.data.air.air_hu},
        {"air_threshold", c.data.air.threshold}}},
      {"training",
       {{"kinds", kinds},
        {"n_epochs", t.n_epochs},
        {"n_critic", t.n_critic},
        {"batch_size", t.batch_size},
        {"micro_batch", t.micro_batch},
        {"checkpoint_every", t.checkpoint_every},
        {"lambda_gp", t.weights.lambda_gp},
        {"lambda1", t.weights.lambda1},
        {"lambda2", t.weights.lambda2},
        {"alpha", t.adam.alpha},
        {"beta1", t.adam.beta1},
        {"beta2", t.adam.beta2},
        {"epsilon", t.adam.eps},
        {"precision", c.precision},
        {"generator",
         {{"n_layers", t.generator.n_layers}, {"hidden_filters", t.generator.hidden_filters}, {"kernel", t.generator.kernel}}},
        {"critic",
         {{"filters", t.critic.filters},
          {"strides", t.critic.strides},
          {"kernel", t.critic.kernel},
          {"slope", t.critic.slope},
          {"fc_hidden", t.critic.fc_hidden}}},
        {"features",
         {{"mode", mode_name(c.features.mode)},
          {"filters", c.features.filters},
          {"strides", c.features.strides},
          {"tap_layer", c.features.tap_layer},
          {"images", c.features.images},
          {"patches", c.features.patches},
          {"epochs", c.features.epochs},
          {"batch_size", c.features.batch_size},
          {"alpha", c.features.alpha}}}}},
      {"evaluation",
       {{"slices", c.evaluation.slices},
        {"display_window", {c.evaluation.display_low, c.evaluation.display_high}},
        {"peak", c.evaluation.peak},
        {"rois", rois}}},
  };
}

void write_resolved(const std::filesystem::path& dir, const ExperimentConfig& config) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", (dir / "config.json").string()));
  out << to_json(config).dump(2) << '\n';
}

nn::FeatureExtractorSpec feature_spec(const FeatureSettings& s) {
  nn::FeatureExtractorSpec spec;
  spec.mode = s.mode;
  spec.filters = s.filters;
  spec.strides = s.strides;
  spec.tap_layer = s.tap_layer;
  return spec;
}

train::FeatureTrainConfig feature_train_config(const ExperimentConfig& c) {
  train::FeatureTrainConfig f;
  f.images = c.features.images;
  f.patches = c.features.patches;
  f.epochs = c.features.epochs;
  f.batch_size = c.features.batch_size;
  f.alpha = c.features.alpha;
  f.seed = ct::derive_seed(c.seed, 9);
  f.spec = feature_spec(c.features);
  return f;
}

}  // namespace forge
