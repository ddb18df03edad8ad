#include "ldct/data.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <json.hpp>
#include <fstream>
#include <iterator>
#include <random>

#include "ldct/digest.hpp"
#include "ldct/weights_io.hpp"

namespace ldct::data {

using nlohmann::json;

void Window::validate() const {
  if (!(hu_max > hu_min)) {
    throw std::invalid_argument(fmt::format("window needs hu_max > hu_min, got [{}, {}]", hu_min, hu_max));
  }
}

double normalize_value(double hu, const Window& w) {
  return std::clamp((hu - w.hu_min) / (w.hu_max - w.hu_min), 0.0, 1.0);
}

double denormalize_value(double v, const Window& w) { return w.hu_min + v * (w.hu_max - w.hu_min); }

Tensor<double> normalize(const Tensor<double>& hu, const Window& w) {
  w.validate();
  Tensor<double> out = hu;
  for (auto& v : out.values()) v = normalize_value(v, w);
  return out;
}

Tensor<double> denormalize(const Tensor<double>& v, const Window& w) {
  w.validate();
  Tensor<double> out = v;
  for (auto& x : out.values()) x = denormalize_value(x, w);
  return out;
}

std::size_t Corpus::n_train() const {
  return static_cast<std::size_t>(
      std::find_if(pairs.begin(), pairs.end(), [](const PatchPair& p) { return p.validation; }) - pairs.begin());
}

bool is_mostly_air(const Tensor<double>& ndct_hu, std::size_t row, std::size_t col, std::size_t side,
                   const AirRule& rule) {
  const std::size_t w = ndct_hu.dim(1);
  std::size_t air = 0;
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) air += ndct_hu[(row + r) * w + col + c] < rule.air_hu;
  return static_cast<double>(air) >= rule.threshold * static_cast<double>(side * side);
}

namespace {

Tensor<float> cut(const Tensor<double>& hu, std::size_t row, std::size_t col, std::size_t side, const Window& w) {
  Tensor<float> out({side, side});
  const std::size_t width = hu.dim(1);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c)
      out[r * side + c] = static_cast<float>(normalize_value(hu[(row + r) * width + col + c], w));
  return out;
}

}  // namespace

ExtractionResult extract_patches(const std::vector<ct::ImagePair>& images, std::size_t patch_side,
                                 std::size_t n_patches, const AirRule& rule, const Window& window, std::uint64_t seed,
                                 bool validation, std::uint32_t first_source_id) {
  window.validate();
  if (!(rule.threshold >= 0.0 && rule.threshold <= 1.0)) {
    throw std::invalid_argument(fmt::format("air threshold must be in [0, 1], got {}", rule.threshold));
  }
  ExtractionResult result;
  if (n_patches == 0) return result;
  if (images.empty()) throw std::invalid_argument("extract_patches: no images");
  for (const auto& im : images) {
    if (im.ndct.rank() != 2 || im.ndct.shape() != im.ldct.shape()) {
      throw ShapeError(fmt::format("extract_patches: image pair shapes {} / {}", to_string(im.ndct.shape()),
                                   to_string(im.ldct.shape())));
    }
    if (patch_side == 0 || patch_side > im.ndct.dim(0) || patch_side > im.ndct.dim(1)) {
      throw std::invalid_argument(
          fmt::format("patch side {} does not fit image {}", patch_side, to_string(im.ndct.shape())));
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
  const std::size_t budget = 50 * n_patches + 1000;
  for (std::size_t attempt = 0; attempt < budget && result.pairs.size() < n_patches; ++attempt) {
    const std::size_t i = pick(rng);
    const auto& im = images[i];
    const std::size_t r = std::uniform_int_distribution<std::size_t>(0, im.ndct.dim(0) - patch_side)(rng);
    const std::size_t c = std::uniform_int_distribution<std::size_t>(0, im.ndct.dim(1) - patch_side)(rng);
    if (is_mostly_air(im.ndct, r, c, patch_side, rule)) {
      ++result.rejected;
      continue;
    }
    result.pairs.push_back({cut(im.ldct, r, c, patch_side, window), cut(im.ndct, r, c, patch_side, window),
                            first_source_id + static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(r),
                            static_cast<std::uint32_t>(c), validation});
  }
  result.shortfall = n_patches - result.pairs.size();
  return result;
}

ct::ImagePair simulate_slice(const CorpusConfig& config, std::size_t index, ct::Phantom* phantom) {
  ct::Phantom p = ct::random_abdomen(ct::derive_seed(config.seed, 1000 + index), config.grid, config.pixel_size);
  auto pair = ct::make_pair(p, config.protocol, ct::derive_seed(config.seed, 2000000 + index), config.mu_water);
  if (phantom) *phantom = std::move(p);
  return pair;
}

Corpus simulate_corpus(const CorpusConfig& config, SimulationReport* report,
                       const std::function<void(std::size_t, std::size_t)>& progress) {
  config.window.validate();
  config.protocol.validate();
  if (config.train_patches > 0 && config.train_images == 0) throw std::invalid_argument("no training images");
  if (config.validation_patches > 0 && config.validation_images == 0) {
    throw std::invalid_argument("no validation images");
  }
  const std::size_t total = config.train_images + config.validation_images;
  std::vector<ct::ImagePair> train, val;
  SimulationReport rep;
  for (std::size_t i = 0; i < total; ++i) {
    auto pair = simulate_slice(config, i);
    rep.clamp_events += pair.clamp_events;
    (i < config.train_images ? train : val).push_back(std::move(pair));
    if (progress) progress(i + 1, total);
  }
  Corpus corpus;
  corpus.patch_side = config.patch_side;
  corpus.window = config.window;
  corpus.seed = config.seed;
  auto t = extract_patches(train, config.patch_side, config.train_patches, config.air, config.window,
                           ct::derive_seed(config.seed, 77), false, 0);
  auto v = extract_patches(val, config.patch_side, config.validation_patches, config.air, config.window,
                           ct::derive_seed(config.seed, 78), true, static_cast<std::uint32_t>(config.train_images));
  rep.rejected = t.rejected + v.rejected;
  rep.shortfall = t.shortfall + v.shortfall;
  corpus.pairs = std::move(t.pairs);
  corpus.pairs.insert(corpus.pairs.end(), std::make_move_iterator(v.pairs.begin()),
                      std::make_move_iterator(v.pairs.end()));
  if (report) *report = rep;
  return corpus;
}

template <class T>
Tensor<T> gather(const Corpus& corpus, std::span<const std::size_t> indices, bool ndct) {
  const std::size_t side = corpus.patch_side;
  const std::size_t px = side * side;
  Tensor<T> out({indices.size(), 1, side, side});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& p = corpus.pairs.at(indices[b]);
    const auto& src = ndct ? p.x : p.z;
    std::copy(src.values().begin(), src.values().end(), out.data() + b * px);
  }
  return out;
}

template Tensor<float> gather<float>(const Corpus&, std::span<const std::size_t>, bool);
template Tensor<double> gather<double>(const Corpus&, std::span<const std::size_t>, bool);

namespace {
constexpr int kCorpusVersion = 1;
}

std::vector<std::uint8_t> encode_corpus(const Corpus& corpus) {
  const std::size_t n = corpus.pairs.size(), side = corpus.patch_side, px = side * side;
  const std::size_t n_train = corpus.n_train();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = corpus.pairs[i];
    if (p.validation != (i >= n_train)) throw std::invalid_argument("corpus must list training pairs first");
    if (p.z.shape() != Shape{side, side} || p.x.shape() != Shape{side, side}) {
      throw ShapeError(fmt::format("corpus pair {} is not {}x{}", i, side, side));
    }
  }
  json meta = {{"format", "ldct-corpus"},       {"corpus_version", kCorpusVersion}, {"count", n},
               {"n_train", n_train},            {"patch_side", side},               {"seed", corpus.seed},
               {"hu_min", corpus.window.hu_min}, {"hu_max", corpus.window.hu_max}};
  WeightsFile file;
  file.version = 2;
  file.meta_json = meta.dump();
  if (n > 0) {
    Tensor<float> z({n, side, side}), x({n, side, side}), origins({n, 3});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& p = corpus.pairs[i];
      std::copy(p.z.values().begin(), p.z.values().end(), z.data() + i * px);
      std::copy(p.x.values().begin(), p.x.values().end(), x.data() + i * px);
      origins[i * 3] = static_cast<float>(p.source_id);
      origins[i * 3 + 1] = static_cast<float>(p.row);
      origins[i * 3 + 2] = static_cast<float>(p.col);
    }
    file.tensors = {{"z_all", std::move(z)}, {"x_all", std::move(x)}, {"origins", std::move(origins)}};
  }
  return encode_weights(file);
}

Corpus decode_corpus(const std::vector<std::uint8_t>& bytes) {
  WeightsFile file = decode_weights(bytes);
  if (file.version != 2) throw WeightsFormatError("corpus file must be WVGF version 2");
  json meta;
  try {
    meta = json::parse(file.meta_json);
  } catch (const json::exception& e) {
    throw WeightsFormatError(fmt::format("corpus metadata is not valid JSON: {}", e.what()));
  }
  if (meta.value("format", "") != "ldct-corpus") throw WeightsFormatError("not a corpus file");
  if (meta.value("corpus_version", 0) != kCorpusVersion) {
    throw WeightsFormatError(fmt::format("unsupported corpus version {}", meta.value("corpus_version", 0)));
  }
  Corpus c;
  try {
    c.patch_side = meta.at("patch_side").get<std::size_t>();
    c.seed = meta.at("seed").get<std::uint64_t>();
    c.window = {meta.at("hu_min").get<double>(), meta.at("hu_max").get<double>()};
    const std::size_t n = meta.at("count").get<std::size_t>();
    const std::size_t n_train = meta.at("n_train").get<std::size_t>();
    if (n_train > n) throw WeightsFormatError("corpus n_train exceeds count");
    if (n == 0) return c;
    const std::size_t side = c.patch_side, px = side * side;
    const auto& z = file.at("z_all");
    const auto& x = file.at("x_all");
    const auto& o = file.at("origins");
    if (z.shape() != Shape{n, side, side} || x.shape() != z.shape() || o.shape() != Shape{n, 3}) {
      throw WeightsFormatError("corpus tensors do not match the declared count and patch side");
    }
    c.pairs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto& p = c.pairs[i];
      p.z = Tensor<float>({side, side}, std::vector<float>(z.data() + i * px, z.data() + (i + 1) * px));
      p.x = Tensor<float>({side, side}, std::vector<float>(x.data() + i * px, x.data() + (i + 1) * px));
      p.source_id = static_cast<std::uint32_t>(o[i * 3]);
      p.row = static_cast<std::uint32_t>(o[i * 3 + 1]);
      p.col = static_cast<std::uint32_t>(o[i * 3 + 2]);
      p.validation = i >= n_train;
    }
  } catch (const json::exception& e) {
    throw WeightsFormatError(fmt::format("corpus metadata: {}", e.what()));
  }
  return c;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  const auto bytes = encode_corpus(corpus);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", path.string()));
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open corpus '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_corpus(bytes);
  } catch (const WeightsFormatError& e) {
    throw WeightsFormatError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string corpus_digest(const Corpus& corpus) { return sha256_hex(encode_corpus(corpus)); }

}  // namespace ldct::data
