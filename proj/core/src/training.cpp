#include "ldct/training.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "ldct/autodiff.hpp"
#include "ldct/ct_sim.hpp"
#include "ldct/ops.hpp"
#include <json.hpp>

namespace ldct::train {

using namespace ldct::ad;
using json = nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class T>
void accumulate(std::vector<Tensor<T>>& total, std::vector<Tensor<T>>&& part, double weight) {
  if (total.empty()) {
    total = std::move(part);
    for (auto& t : total)
      for (T& v : t.values()) v = static_cast<T>(v * weight);
    return;
  }
  for (std::size_t i = 0; i < total.size(); ++i) {
    T* dst = total[i].data();
    const T* src = part[i].data();
    for (std::size_t k = 0; k < total[i].size(); ++k) dst[k] += static_cast<T>(src[k] * weight);
  }
}

template <class T>
Tensor<T> uniform_eps(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> eps({n});
  for (std::size_t i = 0; i < n; ++i) eps[i] = static_cast<T>(u(rng));
  return eps;
}

std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> all(population);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, population - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(k);
  return all;
}

template <class T>
Var<T> adversarial_term(LossKind kind, const nn::DiscriminatorSpec& spec, const nn::BoundParams<T>& critic, Var<T> gz) {
  if (loss::is_wasserstein(kind)) return scalar_mul(mean(nn::discriminator_forward(spec, critic, gz)), -1.0);
  Var<T> p = clamp(nn::discriminator_probability(spec, critic, gz), loss::kGanProbabilityEps,
                   1.0 - loss::kGanProbabilityEps);
  return scalar_mul(mean(log(p)), -1.0);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{}", v);
}

double parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(fmt::format("history: bad number '{}'", s));
  return v;
}

template <class T>
std::vector<NamedTensor> checkpoint_tensors(const TrainResult<T>& state) {
  std::vector<NamedTensor> out = nn::to_named_tensors(state.generator);
  auto add_moments = [&](const nn::NetworkParams<T>& params, const AdamState<T>& adam) {
    const auto& e = params.entries();
    for (std::size_t i = 0; i < e.size(); ++i) {
      out.emplace_back("adam/m/" + e[i].first, adam.m.at(i).template cast<float>());
      out.emplace_back("adam/v/" + e[i].first, adam.v.at(i).template cast<float>());
    }
  };
  add_moments(state.generator, state.generator_adam);
  if (state.critic) {
    for (auto& t : nn::to_named_tensors(*state.critic)) out.push_back(std::move(t));
    add_moments(*state.critic, *state.critic_adam);
  }
  return out;
}

template <class T>
AdamState<T> moments_from_file(const WeightsFile& file, const nn::NetworkParams<T>& params, std::uint64_t t) {
  AdamState<T> s;
  for (const auto& [name, value] : params.entries()) {
    s.m.push_back(file.at("adam/m/" + name).template cast<T>());
    s.v.push_back(file.at("adam/v/" + name).template cast<T>());
    if (s.m.back().shape() != value.shape() || s.v.back().shape() != value.shape()) {
      throw WeightsFormatError(fmt::format("checkpoint moments for '{}' do not match the parameter shape", name));
    }
  }
  s.t = t;
  return s;
}

}  // namespace

void TrainConfig::validate() const {
  weights.validate();
  if (!(adam.alpha > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
      !(adam.eps > 0)) {
    throw std::invalid_argument("training: Adam needs alpha > 0, 0 <= beta < 1 and eps > 0");
  }
  if (n_epochs == 0) throw std::invalid_argument("training: n_epochs must be positive");
  if (batch_size == 0 || micro_batch == 0) throw std::invalid_argument("training: batch sizes must be positive");
  if (loss::uses_critic(kind) && n_critic == 0) {
    throw std::invalid_argument(fmt::format("training: {} needs n_critic >= 1", loss::to_string(kind)));
  }
}

std::string History::to_csv(bool with_seconds) const {
  std::string out = with_seconds ? std::string(kHeader) : std::string("epoch,mse,vgg,w_raw,w_norm");
  out += '\n';
  for (const auto& r : records) {
    out += fmt::format("{},{},{},{},{}", r.epoch, format_double(r.mse), format_double(r.vgg), format_double(r.w_raw),
                       format_double(r.w_norm));
    if (with_seconds) out += "," + format_double(r.seconds);
    out += '\n';
  }
  return out;
}

History History::from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw std::invalid_argument("history: unexpected header");
  History h;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream row(line);
    for (std::string cell; std::getline(row, cell, ',');) f.push_back(cell);
    if (f.size() != 6) throw std::invalid_argument(fmt::format("history: expected 6 fields in '{}'", line));
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(std::stoull(f[0]));
    r.mse = parse_double(f[1]);
    r.vgg = parse_double(f[2]);
    r.w_raw = parse_double(f[3]);
    r.w_norm = parse_double(f[4]);
    r.seconds = parse_double(f[5]);
    h.records.push_back(r);
  }
  return h;
}

void History::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  out << to_csv();
}

History History::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_csv(ss.str());
}

std::string checkpoint_name(LossKind kind, std::size_t epoch) {
  return fmt::format("{}_epoch{}.wvgf", loss::to_string(kind), epoch);
}

std::size_t tissue_class(double hu) {
  std::size_t c = 0;
  while (c < std::size(kTissueEdges) && hu >= kTissueEdges[c]) ++c;
  return c;
}

template <class T>
Tensor<T> apply_generator(const nn::GeneratorSpec& spec, const nn::NetworkParams<T>& params, const Tensor<T>& z) {
  Tape<T> tape;
  NoGradScope<T> guard(tape);
  auto bound = nn::bind(params, tape, false);
  Var<T> out = nn::generator_forward(spec, bound, tape.constant(z));
  return tape.take_value(out.id());
}

template <class T>
EpochRecord validate(const data::Corpus& corpus, const nn::GeneratorSpec& gspec, const nn::NetworkParams<T>& generator,
                     const nn::DiscriminatorSpec* cspec, const nn::NetworkParams<T>* critic,
                     const Extractor<T>* extractor, std::size_t chunk) {
  const std::size_t n_train = corpus.n_train(), n_val = corpus.n_validation();
  if (n_val == 0) throw std::invalid_argument("validate: the corpus has no validation pairs");
  if (chunk == 0) chunk = 32;
  const bool with_critic = cspec != nullptr && critic != nullptr;
  double mse = 0, vgg = 0;
  std::vector<T> dx_all, dgz_all;
  for (std::size_t begin = 0; begin < n_val; begin += chunk) {
    const std::size_t n = std::min(chunk, n_val - begin);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), n_train + begin);
    Tape<T> tape;
    NoGradScope<T> guard(tape);
    auto g = nn::bind(generator, tape, false);
    Var<T> x = tape.constant(data::gather<T>(corpus, idx, true));
    Var<T> gz = nn::generator_forward(gspec, g, tape.constant(data::gather<T>(corpus, idx, false)));
    const double w = static_cast<double>(n) / static_cast<double>(n_val);
    mse += w * static_cast<double>(loss::mse_loss(gz, x).value().item());
    if (extractor) {
      auto f = nn::bind(extractor->params, tape, false);
      vgg += w * static_cast<double>(loss::perceptual_loss(gz, x, extractor->spec, f).value().item());
    }
    if (with_critic) {
      auto d = nn::bind(*critic, tape, false);
      const auto sx = nn::discriminator_forward(*cspec, d, x).value().values();
      const auto sg = nn::discriminator_forward(*cspec, d, gz).value().values();
      dx_all.insert(dx_all.end(), sx.begin(), sx.end());
      dgz_all.insert(dgz_all.end(), sg.begin(), sg.end());
    }
  }
  EpochRecord r;
  r.mse = mse;
  r.vgg = extractor ? vgg : kNaN;
  r.w_raw = r.w_norm = kNaN;
  if (with_critic) {
    const std::size_t m = dx_all.size();
    auto est = loss::wasserstein_estimate(Tensor<T>({m}, std::move(dx_all)), Tensor<T>({m}, std::move(dgz_all)),
                                          corpus.patch_side * corpus.patch_side);
    r.w_raw = est.raw;
    r.w_norm = est.normalized;
  }
  return r;
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainResult<T>& state, std::size_t epoch) {
  json meta = {{"format", "ldct-checkpoint"},
               {"epoch", epoch},
               {"generator_t", state.generator_adam.t},
               {"critic_t", state.critic_adam ? state.critic_adam->t : 0},
               {"has_critic", state.critic.has_value()}};
  write_weights(path, checkpoint_tensors(state), meta.dump());
}

template <class T>
void load_checkpoint(const std::filesystem::path& path, TrainResult<T>& state, std::size_t* epoch) {
  const WeightsFile file = read_weights(path);
  const json meta = json::parse(file.meta_json.empty() ? std::string("{}") : file.meta_json);
  if (meta.value("format", "") != "ldct-checkpoint") {
    throw WeightsFormatError(fmt::format("{} is not a training checkpoint", path.string()));
  }
  state.generator = nn::params_from_file<T>(file, nn::GeneratorSpec::tag);
  state.generator_adam = moments_from_file(file, state.generator, meta.at("generator_t").get<std::uint64_t>());
  if (meta.at("has_critic").get<bool>()) {
    state.critic = nn::params_from_file<T>(file, nn::DiscriminatorSpec::tag);
    state.critic_adam = moments_from_file(file, *state.critic, meta.at("critic_t").get<std::uint64_t>());
  } else {
    state.critic.reset();
    state.critic_adam.reset();
  }
  if (epoch) *epoch = meta.at("epoch").get<std::size_t>();
}

template <class T>
TrainResult<T> train(const data::Corpus& corpus, const TrainConfig& config, const Extractor<T>* extractor,
                     const EpochCallback& on_epoch) {
  config.validate();
  const LossKind kind = config.kind;
  const std::size_t n_train = corpus.n_train();
  if (n_train == 0) throw std::invalid_argument("train: the corpus has no training pairs");
  if (corpus.n_validation() == 0) throw std::invalid_argument("train: the corpus has no validation pairs");
  if (loss::uses_vgg(kind) && extractor == nullptr) {
    throw std::invalid_argument(fmt::format("train: {} needs a feature extractor", loss::to_string(kind)));
  }
  const bool adversarial = loss::uses_critic(kind);
  nn::DiscriminatorSpec cspec = config.critic;
  cspec.input_side = corpus.patch_side;

  TrainResult<T> st;
  st.generator = nn::init_params<T>(config.generator, ct::derive_seed(config.seed, 11));
  st.generator_adam = AdamState<T>::zeros_like(st.generator);
  if (adversarial) {
    st.critic = nn::init_params<T>(cspec, ct::derive_seed(config.seed, 12));
    st.critic_adam = AdamState<T>::zeros_like(*st.critic);
  }

  const std::size_t batch = std::min(config.batch_size, n_train);
  const std::size_t steps = n_train / batch;
  const std::size_t micro = std::min(config.micro_batch, batch);
  std::mt19937_64 critic_rng(ct::derive_seed(config.seed, 13));
  std::mt19937_64 eps_rng(ct::derive_seed(config.seed, 14));

  auto for_micro = [&](const std::vector<std::size_t>& idx, auto&& fn) {
    for (std::size_t b = 0; b < idx.size(); b += micro) {
      const std::size_t n = std::min(micro, idx.size() - b);
      std::vector<std::size_t> part(idx.begin() + static_cast<std::ptrdiff_t>(b),
                                    idx.begin() + static_cast<std::ptrdiff_t>(b + n));
      fn(part, static_cast<double>(n) / static_cast<double>(idx.size()));
    }
  };

  auto critic_update = [&](const std::vector<std::size_t>& idx) {
    std::vector<Tensor<T>> grads;
    for_micro(idx, [&](const std::vector<std::size_t>& part, double weight) {
      const Tensor<T> x = data::gather<T>(corpus, part, true);
      const Tensor<T> gz = apply_generator(config.generator, st.generator, data::gather<T>(corpus, part, false));
      Tape<T> tape;
      auto d = nn::bind(*st.critic, tape, true);
      Var<T> objective;
      if (loss::is_wasserstein(kind)) {
        const Tensor<T> eps = uniform_eps<T>(part.size(), eps_rng);
        Var<T> pen = loss::gradient_penalty(cspec, d, x, gz, eps, config.weights.lambda_gp, tape);
        ++st.counters.penalty_evaluations;
        Var<T> dx = nn::discriminator_forward(cspec, d, tape.constant(x));
        Var<T> dgz = nn::discriminator_forward(cspec, d, tape.constant(gz));
        objective = loss::wgan_losses(dx, dgz, pen).critic;
      } else {
        auto l = loss::gan_losses(nn::discriminator_probability(cspec, d, tape.constant(x)),
                                  nn::discriminator_probability(cspec, d, tape.constant(gz)));
        if (l.clamped) ++st.counters.clamped_batches;
        objective = l.discriminator;
      }
      accumulate(grads, gradients(objective, d.vars), weight);
    });
    adam_step(*st.critic, grads, *st.critic_adam, config.adam);
    ++st.counters.critic_updates;
  };

  auto generator_update = [&](const std::vector<std::size_t>& idx) {
    std::vector<Tensor<T>> grads;
    for_micro(idx, [&](const std::vector<std::size_t>& part, double weight) {
      Tape<T> tape;
      auto g = nn::bind(st.generator, tape, true);
      Var<T> x = tape.constant(data::gather<T>(corpus, part, true));
      Var<T> gz = nn::generator_forward(config.generator, g, tape.constant(data::gather<T>(corpus, part, false)));
      loss::LossComponents<T> c;
      if (loss::uses_mse(kind)) c.mse = loss::mse_loss(gz, x);
      if (loss::uses_vgg(kind)) {
        auto f = nn::bind(extractor->params, tape, false);
        c.vgg = loss::perceptual_loss(gz, x, extractor->spec, f);
      }
      if (adversarial) {
        auto d = nn::bind(*st.critic, tape, false);
        c.adversarial = adversarial_term(kind, cspec, d, gz);
      }
      Var<T> objective = loss::joint_generator_loss(kind, c, config.weights);
      const double value = static_cast<double>(objective.value().item());
      if (!std::isfinite(value)) throw NonFiniteGradient("generator loss", 0);
      accumulate(grads, gradients(objective, g.vars), weight);
    });
    adam_step(st.generator, grads, st.generator_adam, config.adam);
    ++st.counters.generator_updates;
  };

  if (!config.checkpoint_dir.empty()) std::filesystem::create_directories(config.checkpoint_dir);
  nn::NetworkParams<T> last_good_generator = st.generator;
  std::optional<nn::NetworkParams<T>> last_good_critic = st.critic;

  for (std::size_t epoch = 1; epoch <= config.n_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(ct::derive_seed(config.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    try {
      for (std::size_t s = 0; s < steps; ++s) {
        if (adversarial) {
          for (std::size_t k = 0; k < config.n_critic; ++k) {
            critic_update(sample_without_replacement(n_train, batch, critic_rng));
          }
          st.counters.critic_updates_per_step.push_back(config.n_critic);
        }
        generator_update(std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(s * batch),
                                                  order.begin() + static_cast<std::ptrdiff_t>((s + 1) * batch)));
      }
    } catch (const NonFiniteGradient& e) {
      st.diverged = true;
      st.message = fmt::format("diverged in epoch {}: {}", epoch, e.what());
      st.generator = std::move(last_good_generator);
      st.critic = std::move(last_good_critic);
      break;
    }
    const bool wasserstein = adversarial && loss::is_wasserstein(kind);
    EpochRecord r = validate<T>(corpus, config.generator, st.generator, wasserstein ? &cspec : nullptr,
                                wasserstein ? &*st.critic : nullptr, extractor);
    r.epoch = epoch;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    st.history.records.push_back(r);
    last_good_generator = st.generator;
    last_good_critic = st.critic;
    if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 &&
        (epoch % config.checkpoint_every == 0 || epoch == config.n_epochs)) {
      const auto path = config.checkpoint_dir / checkpoint_name(kind, epoch);
      save_checkpoint(path, st, epoch);
      st.checkpoints.push_back(path);
    }
    if (on_epoch) on_epoch(r);
  }
  return st;
}

template <class T>
FeatureTrainResult<T> train_feature_extractor(const FeatureTrainConfig& config, const data::CorpusConfig& simulation) {
  if (config.images == 0 || config.patches == 0 || config.epochs == 0 || config.batch_size == 0) {
    throw std::invalid_argument("train_feature_extractor: counts must be positive");
  }
  const std::size_t side = simulation.patch_side;
  if (side > simulation.grid) throw std::invalid_argument("train_feature_extractor: patch larger than the image");
  data::CorpusConfig sim = simulation;
  sim.seed = ct::derive_seed(simulation.seed, 500);

  std::vector<Tensor<T>> inputs;
  std::vector<Tensor<T>> targets;
  std::mt19937_64 rng(ct::derive_seed(config.seed, 1));
  const std::size_t per_image = (config.patches + config.images - 1) / config.images;
  for (std::size_t i = 0; i < config.images && inputs.size() < config.patches; ++i) {
    ct::Phantom phantom;
    const ct::ImagePair pair = data::simulate_slice(sim, i, &phantom);
    const Tensor<double> clean = ct::to_hu(ct::render_phantom(phantom), sim.mu_water);
    const Tensor<double> input = data::normalize(pair.ndct, sim.window);
    const std::size_t w = input.dim(1);
    std::uniform_int_distribution<std::size_t> pos(0, simulation.grid - side);
    for (std::size_t k = 0; k < per_image && inputs.size() < config.patches; ++k) {
      const std::size_t r0 = pos(rng), c0 = pos(rng);
      Tensor<T> patch({1, 1, side, side});
      std::vector<double> counts(kTissueClasses, 0.0);
      for (std::size_t r = 0; r < side; ++r) {
        for (std::size_t c = 0; c < side; ++c) {
          const std::size_t src = (r0 + r) * w + (c0 + c);
          patch[r * side + c] = static_cast<T>(input[src]);
          counts[tissue_class(clean[src])] += 1.0;
        }
      }
      Tensor<T> target({1, kTissueClasses});
      for (std::size_t c = 0; c < kTissueClasses; ++c) target[c] = static_cast<T>(counts[c] / double(side * side));
      inputs.push_back(std::move(patch));
      targets.push_back(std::move(target));
    }
  }

  nn::ProxyHeadSpec head_spec;
  head_spec.in_features = config.spec.filters.at(std::min(config.spec.tap_layer, config.spec.filters.size() - 1));
  head_spec.classes = kTissueClasses;
  FeatureTrainResult<T> out{nn::init_params<T>(config.spec, ct::derive_seed(config.seed, 2)),
                            nn::init_params<T>(head_spec, ct::derive_seed(config.seed, 3)),
                            {}};
  auto fe_adam = AdamState<T>::zeros_like(out.extractor);
  auto head_adam = AdamState<T>::zeros_like(out.head);
  const AdamConfig adam{config.alpha, 0.9, 0.999, 1e-8};
  const std::size_t n = inputs.size();
  const std::size_t batch = std::min(config.batch_size, n);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(ct::derive_seed(config.seed, 100 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b + batch <= n; b += batch) {
      Tensor<T> xb({batch, 1, side, side});
      Tensor<T> yb({batch, kTissueClasses});
      for (std::size_t i = 0; i < batch; ++i) {
        const auto& src = inputs[order[b + i]];
        std::copy(src.values().begin(), src.values().end(), xb.data() + i * side * side);
        const auto& t = targets[order[b + i]];
        std::copy(t.values().begin(), t.values().end(), yb.data() + i * kTissueClasses);
      }
      Tape<T> tape;
      auto f = nn::bind(out.extractor, tape, true);
      auto h = nn::bind(out.head, tape, true);
      Var<T> pred = nn::proxy_head_forward(head_spec, h, nn::feature_forward(config.spec, f, tape.constant(xb)));
      Var<T> objective = mean(square(sub(pred, tape.constant(yb))));
      total += static_cast<double>(objective.value().item());
      ++batches;
      std::vector<Var<T>> wrt = f.vars;
      wrt.insert(wrt.end(), h.vars.begin(), h.vars.end());
      auto grads = gradients(objective, wrt);
      std::vector<Tensor<T>> gf(std::make_move_iterator(grads.begin()),
                                std::make_move_iterator(grads.begin() + static_cast<std::ptrdiff_t>(f.vars.size())));
      std::vector<Tensor<T>> gh(std::make_move_iterator(grads.begin() + static_cast<std::ptrdiff_t>(f.vars.size())),
                                std::make_move_iterator(grads.end()));
      adam_step(out.extractor, gf, fe_adam, adam);
      adam_step(out.head, gh, head_adam, adam);
    }
    out.losses.push_back(batches ? total / static_cast<double>(batches) : kNaN);
  }
  return out;
}

#define LDCT_INSTANTIATE_TRAINING(T)                                                                               \
  template Tensor<T> apply_generator(const nn::GeneratorSpec&, const nn::NetworkParams<T>&, const Tensor<T>&);     \
  template EpochRecord validate(const data::Corpus&, const nn::GeneratorSpec&, const nn::NetworkParams<T>&,        \
                                const nn::DiscriminatorSpec*, const nn::NetworkParams<T>*, const Extractor<T>*,    \
                                std::size_t);                                                                      \
  template void save_checkpoint(const std::filesystem::path&, const TrainResult<T>&, std::size_t);                 \
  template void load_checkpoint(const std::filesystem::path&, TrainResult<T>&, std::size_t*);                      \
  template TrainResult<T> train(const data::Corpus&, const TrainConfig&, const Extractor<T>*, const EpochCallback&); \
  template FeatureTrainResult<T> train_feature_extractor(const FeatureTrainConfig&, const data::CorpusConfig&);

LDCT_INSTANTIATE_TRAINING(float)
LDCT_INSTANTIATE_TRAINING(double)

}  // namespace ldct::train
