// Acceptance runner: one PASS/FAIL line per criterion.
// Exit status: 0 all selected criteria pass, 1 some failed, 77 only bench
// artifacts were missing.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "ldct/adam.hpp"
#include "ldct/autodiff.hpp"
#include "ldct/ct_sim.hpp"
#include "ldct/data.hpp"
#include "ldct/losses.hpp"
#include "ldct/metrics.hpp"
#include "ldct/networks.hpp"
#include "ldct/training.hpp"
#include "metric_oracles.hpp"
#include "oracle_baselines.hpp"
#include "primitive_cases.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ldct;
using namespace ldct::ad;
using ldct::testing::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
  bool missing_artifacts = false;
};

// ---------------------------------------------------------------------------

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  auto note = [&](const std::string& name, const GradCheckResult& r) {
    if (r.max_rel_error >= worst) worst = r.max_rel_error, worst_name = name;
  };

  std::uint64_t seed = 100;
  std::size_t primitives = 0;
  for (const auto& pc : ldct::testing::primitive_cases<double>()) {
    std::vector<Tensor<double>> point;
    for (const auto& s : pc.shapes) point.push_back(random_tensor<double>(s, ++seed, pc.lo, pc.hi, pc.gap));
    note(pc.name, check_gradients<double>(pc.fn, point, {.step = 1e-6}));
    ++primitives;
  }

  auto network_point = [](const auto& params, Tensor<double> input) {
    std::vector<Tensor<double>> point{std::move(input)};
    for (const auto& e : params.entries()) point.push_back(e.second);
    return point;
  };

  const nn::GeneratorSpec gspec;
  const auto gparams = nn::init_params<double>(gspec, 5);
  auto g = [&](Tape<double>&, const std::vector<Var<double>>& v) {
    nn::BoundParams<double> b{"generator", {}, {v.begin() + 1, v.end()}};
    for (const auto& e : gparams.entries()) b.names.push_back(e.first);
    return ldct::testing::contract(nn::generator_forward(gspec, b, v[0]), 31);
  };
  note("generator", check_gradients<double>(g, network_point(gparams, random_tensor<double>({1, 1, 16, 16}, 6, 0, 1)),
                                            {.step = 1e-6, .max_components = 6, .seed = 1}));

  const nn::DiscriminatorSpec cspec;
  const auto cparams = nn::init_params<double>(cspec, 7);
  auto c = [&](Tape<double>&, const std::vector<Var<double>>& v) {
    nn::BoundParams<double> b{"critic", {}, {v.begin() + 1, v.end()}};
    for (const auto& e : cparams.entries()) b.names.push_back(e.first);
    return ldct::testing::contract(nn::discriminator_forward(cspec, b, v[0]), 32);
  };
  note("critic", check_gradients<double>(c, network_point(cparams, random_tensor<double>({1, 1, 64, 64}, 8, 0, 1)),
                                         {.step = 1e-6, .max_components = 4, .seed = 2}));

  const double elapsed = seconds_since(t0);
  return {worst < 1e-4 && elapsed < 120.0,
          fmt::format("{} primitives + generator + critic, max rel error {:.3g} ({}), {:.1f}s (limits 1e-4, 120s)",
                      primitives, worst, worst_name, elapsed)};
}

// ---------------------------------------------------------------------------

Tensor<double> scaled_to_norm(Tensor<double> a, double norm) {
  double s = 0;
  for (double v : a.values()) s += v * v;
  for (auto& v : a.values()) v *= norm / std::sqrt(s);
  return a;
}

loss::CriticFn<double> linear_critic(Tape<double>& tape, const Tensor<double>& a, std::size_t batch) {
  Shape s = a.shape();
  s.insert(s.begin(), batch);
  Tensor<double> tiled(s);
  for (std::size_t n = 0; n < batch; ++n)
    std::copy(a.values().begin(), a.values().end(), tiled.values().begin() + static_cast<long>(n * a.size()));
  Var<double> av = tape.constant(std::move(tiled));
  return [av](Var<double> x) { return sum_per_sample(mul(x, av)); };
}

Outcome double_backward() {
  auto x = random_tensor<double>({2, 1, 5, 5}, 11);
  auto gz = random_tensor<double>({2, 1, 5, 5}, 12);
  auto eps = Tensor<double>::from({0.3, 0.8}, {2});
  auto f = [&](Tape<double>& t, const std::vector<Var<double>>& v) {
    loss::CriticFn<double> critic = [&](Var<double> in) {
      const std::size_t n = in.shape()[0];
      auto h = leaky_relu(conv2d(in, v[0], v[1], 1, Padding::Same), 0.2);
      return reshape(matmul(flatten(h), v[2]), Shape{n});
    };
    return loss::gradient_penalty<double>(critic, x, gz, eps, 10.0, t);
  };
  std::vector<Tensor<double>> point{random_tensor<double>({2, 1, 3, 3}, 13, -1, 1, 0.05),
                                    random_tensor<double>({2}, 14, -1, 1, 0.05),
                                    random_tensor<double>({50, 1}, 15, -1, 1, 0.05)};
  const auto r = check_gradients<double>(f, point, {.step = 1e-6});

  auto linear_penalty = [](double norm) {
    Tape<double> t;
    auto a = scaled_to_norm(random_tensor<double>({1, 5, 5}, 1), norm);
    auto xs = random_tensor<double>({3, 1, 5, 5}, 2);
    auto gs = random_tensor<double>({3, 1, 5, 5}, 3);
    auto e = random_tensor<double>({3}, 4, 0, 1);
    return loss::gradient_penalty<double>(linear_critic(t, a, 3), xs, gs, e, 10.0, t).value().item();
  };
  const double p1 = linear_penalty(1.0), p2 = linear_penalty(2.0);
  const bool ok = r.max_rel_error < 1e-3 && std::abs(p1) <= 1e-6 && std::abs(p2 - 10.0) <= 1e-6;
  return {ok, fmt::format("two-layer critic rel error {:.3g} (limit 1e-3); unit norm {:.3g}, norm 2 {:.12g}",
                          r.max_rel_error, p1, p2)};
}

// ---------------------------------------------------------------------------

Outcome adam_oracle() {
  nn::NetworkParams<double> p("oracle");
  p.add("a", random_tensor<double>({3, 4}, 1));
  p.add("b", random_tensor<double>({5}, 2));
  const auto before = p;
  auto state = train::AdamState<double>::zeros_like(p);
  std::vector<Tensor<double>> grads;
  for (const auto& e : p.entries()) grads.emplace_back(e.second.shape(), 1.0);
  train::AdamConfig cfg;
  cfg.alpha = 1e-5;
  cfg.beta1 = 0.5;
  cfg.beta2 = 0.9;
  train::adam_step(p, grads, state, cfg);
  const double expected = -1e-5 / (1.0 + 1e-8);
  double worst = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& now = p.entries()[i].second;
    const auto& was = before.entries()[i].second;
    for (std::size_t k = 0; k < now.size(); ++k) worst = std::max(worst, std::abs((now[k] - was[k]) - expected));
  }
  return {worst <= 1e-12, fmt::format("max deviation from -1e-5/(1+1e-8): {:.3g} (limit 1e-12)", worst)};
}

// ---------------------------------------------------------------------------

Outcome metric_oracles() {
  using namespace ldct::testing;
  double worst = 0;
  bool self_exact = true;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const std::size_t rows = 24 + s, cols = 20 + 2 * s;
    auto a = random_tensor<double>({rows, cols}, 1000 + s, -300, 300);
    auto b = a;
    auto n = random_tensor<double>({rows, cols}, 2000 + s, -80, 80);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += n[i];
    worst = std::max(worst, rel_diff(metrics::psnr(b, a).db, oracle_psnr(b, a, metrics::kDefaultPeak)));
    worst = std::max(worst, rel_diff(metrics::ssim(b, a), brute_ssim(b, a, 11, 1.5, metrics::kDefaultPeak)));
    const metrics::RoiSpec roi{2 + s, 3, 10, 9, "r"};
    const auto got = metrics::roi_stats(b, roi);
    const auto want = oracle_roi(b, roi.row, roi.col, roi.height, roi.width);
    worst = std::max({worst, rel_diff(got.mean, want.mean), rel_diff(got.sd, want.sd)});
    self_exact = self_exact && metrics::ssim(a, a) == 1.0;
  }
  return {worst < 1e-6 && self_exact,
          fmt::format("10 pairs, max rel error {:.3g} (limit 1e-6); ssim(x,x)==1 {}", worst, self_exact)};
}

// ---------------------------------------------------------------------------

Outcome ct_consistency() {
  const auto ref = ct::reference_phantom(128, 0.3);
  const auto img = ct::render_phantom(ref);
  ct::ScanProtocol views;
  views.n_views = 180;
  const auto rec = ct::fbp_reconstruct(ct::radon_forward(img, ref.pixel_size, views));
  double ss = 0;
  for (std::size_t i = 0; i < img.size(); ++i) ss += (rec[i] - img[i]) * (rec[i] - img[i]);
  const double rmse = std::sqrt(ss / static_cast<double>(img.size()));

  auto sd_of = [](const Tensor<double>& im, const std::vector<std::size_t>& pix) {
    double m = 0;
    for (auto i : pix) m += im[i];
    m /= static_cast<double>(pix.size());
    double v = 0;
    for (auto i : pix) v += (im[i] - m) * (im[i] - m);
    return std::sqrt(v / static_cast<double>(pix.size() - 1));
  };
  std::size_t noisier = 0;
  double ratio_sum = 0;
  const ct::ScanProtocol protocol;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto phantom = ct::random_abdomen(seed);
    const auto pair = ct::make_pair(phantom, protocol, seed);
    const auto pix = ct::roi_pixels(phantom, phantom.flat_rois.at(0));
    const double nd = sd_of(pair.ndct, pix), ld = sd_of(pair.ldct, pix);
    noisier += ld > nd;
    ratio_sum += ld / nd;
  }
  const bool ok = rmse < ldct::testing::kFbpRmseBaseline && noisier == 20;
  return {ok, fmt::format("FBP RMSE {:.6f} (baseline {}); quarter-dose SD higher on {}/20 pairs, mean ratio {:.2f}",
                          rmse, ldct::testing::kFbpRmseBaseline, noisier, ratio_sum / 20)};
}

// ---------------------------------------------------------------------------

Outcome training_smoke() {
  const auto t0 = Clock::now();
  const data::CorpusConfig cc;
  const auto corpus = data::simulate_corpus(cc);
  const double sim_seconds = seconds_since(t0);
  train::TrainConfig tc;
  tc.kind = loss::LossKind::CnnMse;
  tc.n_epochs = 20;
  tc.batch_size = 128;
  const auto result = train::train<float>(corpus, tc, nullptr, [](const train::EpochRecord& r) {
    fmt::print(stderr, "  smoke epoch {:2} validation mse {:.6g} ({:.1f}s)\n", r.epoch, r.mse, r.seconds);
  });
  const double elapsed = seconds_since(t0);
  const unsigned cores = std::clamp(std::thread::hardware_concurrency(), 1u, 4u);
  const double budget = 900.0 * 4.0 / cores;
  const auto& recs = result.history.records;
  if (recs.size() != 20 || result.diverged) {
    return {false, fmt::format("run stopped after {} epochs: {}", recs.size(), result.message)};
  }
  const double first = recs.front().mse, last = recs.back().mse;
  return {elapsed < budget && last <= 0.5 * first,
          fmt::format("{} train / {} validation pairs; mse epoch 1 {:.6g}, epoch 20 {:.6g} (ratio {:.3f}, limit 0.5); "
                      "{:.0f}s incl. {:.0f}s simulation (budget {:.0f}s for {} core{})",
                      corpus.n_train(), corpus.n_validation(), first, last, last / first, elapsed, sim_seconds, budget,
                      cores, cores == 1 ? "" : "s")};
}

// ---------------------------------------------------------------------------

const std::vector<std::string> kAllKinds{"cnn-mse", "cnn-vgg", "wgan-mse", "wgan-vgg", "wgan", "gan"};

std::optional<json> read_summary(const fs::path& dir) {
  const fs::path p = dir / "summary.json";
  if (dir.empty() || !fs::exists(p)) return std::nullopt;
  std::ifstream in(p);
  return json::parse(in);
}

// Empty when the run matches the documented bench scale.
std::string scale_problem(const json& s) {
  if (!s.contains("config")) return "summary has no resolved config";
  const auto& c = s["config"];
  const auto epochs = c["training"]["n_epochs"].get<std::size_t>();
  const auto patches = c["data"]["train_patches"].get<std::size_t>();
  const auto slices = c["evaluation"]["slices"].get<std::size_t>();
  if (epochs < 40) return fmt::format("bench ran {} epochs, needs 40", epochs);
  if (patches < 10000) return fmt::format("bench corpus has {} training pairs, needs 10000", patches);
  if (slices < 10) return fmt::format("bench evaluated {} slices, needs 10", slices);
  for (const auto& k : kAllKinds) {
    if (!s["kinds"].contains(k)) return fmt::format("bench did not train {}", k);
    if (s["kinds"][k]["diverged"].get<bool>()) return fmt::format("{} diverged", k);
  }
  return {};
}

double number(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

Outcome mse_vgg_ordering(const json& s) {
  const auto& k = s["kinds"];
  const std::vector<std::string> order{"cnn-mse", "wgan-mse", "wgan-vgg", "cnn-vgg"};
  bool ok = true;
  std::string mse_line, vgg_line;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double m = number(k[order[i]]["final_mse"]), v = number(k[order[i]]["final_vgg"]);
    mse_line += fmt::format("{}{}={:.5g}", i ? " " : "", order[i], m);
    vgg_line += fmt::format("{}{}={:.5g}", i ? " " : "", order[i], v);
    if (i + 1 < order.size()) {
      const double mn = number(k[order[i + 1]]["final_mse"]), vn = number(k[order[i + 1]]["final_vgg"]);
      ok = ok && m <= 1.1 * mn && vn <= 1.1 * v;
    }
  }
  return {ok, fmt::format("mse [{}], vgg [{}], 10% slack", mse_line, vgg_line)};
}

Outcome psnr_ssim_ranking(const json& s) {
  const auto& means = s["evaluation"]["means"];
  std::vector<std::pair<double, std::string>> ranked;
  bool ssim_ok = true;
  const double ldct_ssim = means["LDCT"]["ssim"].get<double>();
  for (const auto& k : kAllKinds) {
    ranked.emplace_back(means[k]["psnr"].get<double>(), k);
    ssim_ok = ssim_ok && means[k]["ssim"].get<double>() > ldct_ssim;
  }
  std::sort(ranked.rbegin(), ranked.rend());
  const std::set<std::string> bottom{ranked[ranked.size() - 1].second, ranked[ranked.size() - 2].second};
  const bool top_ok = ranked.front().second == "cnn-mse";
  const bool bottom_ok = bottom == std::set<std::string>{"wgan", "gan"};
  std::string order;
  for (const auto& [p, k] : ranked) order += fmt::format("{}{}={:.3f}", order.empty() ? "" : " > ", k, p);
  return {top_ok && bottom_ok && ssim_ok, fmt::format("psnr {}; every ssim above LDCT {:.4f}: {}", order, ldct_ssim,
                                                      ssim_ok)};
}

Outcome roi_sd_vote(const json& s) {
  const auto& slices = s["evaluation"]["slices"];
  std::size_t votes = 0;
  for (const auto& sl : slices) {
    const auto& sd = sl["roi_sd"];
    const double clean = sd["NDCT"].get<double>(), mse = sd["cnn-mse"].get<double>(), vgg = sd["wgan-vgg"].get<double>();
    votes += mse < vgg && std::abs(vgg - clean) < std::abs(mse - clean);
  }
  return {2 * votes > slices.size(), fmt::format("{}/{} slices agree", votes, slices.size())};
}

Outcome wdistance_decay(const json& s) {
  std::vector<double> w;
  for (const auto& v : s["kinds"]["wgan-vgg"]["w_raw"]) w.push_back(number(v));
  if (w.size() < 5) return {false, "fewer than 5 epochs recorded"};
  auto average = [&](std::size_t end) {
    double t = 0;
    for (std::size_t i = end - 5; i < end; ++i) t += w[i];
    return t / 5.0;
  };
  const double early = average(5), late = average(w.size());
  return {late < early, fmt::format("wgan-vgg 5-epoch average at epoch 5 {:.5g}, at epoch {} {:.5g}", early, w.size(),
                                    late)};
}

Outcome determinism(const json& a, const std::optional<json>& b) {
  if (!b) return {false, "no repeat bench directory", true};
  std::vector<std::string> differing;
  for (const char* key : {"corpus_digest", "features_digest"})
    if (a[key] != (*b)[key]) differing.push_back(key);
  for (const auto& k : kAllKinds) {
    for (const char* key : {"history_digest", "generator_digest", "critic_digest"}) {
      const auto& ka = a["kinds"][k];
      const auto& kb = (*b)["kinds"].value(k, json::object());
      if (ka.value(key, json()) != kb.value(key, json())) differing.push_back(fmt::format("{}/{}", k, key));
    }
  }
  std::string list;
  for (const auto& d : differing) list += (list.empty() ? "" : ", ") + d;
  return {differing.empty(), differing.empty() ? "all digests identical" : "differ: " + list};
}

std::set<int> parse_criteria(const std::string& text) {
  std::set<int> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const std::size_t dash = item.find('-');
    const int lo = std::stoi(item.substr(0, dash));
    const int hi = dash == std::string::npos ? lo : std::stoi(item.substr(dash + 1));
    for (int i = lo; i <= hi; ++i) out.insert(i);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  for (int c : out)
    if (c < 1 || c > 11) throw std::invalid_argument(fmt::format("no criterion {}", c));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::string criteria_text = "1-11";
  fs::path bench_dir, repeat_dir;
  app.add_option("--criteria", criteria_text, "Comma-separated criteria or ranges, e.g. 1-5,11");
  app.add_option("--bench-dir", bench_dir, "Output directory of a bench run");
  app.add_option("--bench-repeat-dir", repeat_dir, "Second bench run with the same seed");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  try {
    selected = parse_criteria(criteria_text);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }

  std::optional<json> summary, repeat;
  std::string bench_problem;
  if (std::any_of(selected.begin(), selected.end(), [](int c) { return c >= 7; })) {
    summary = read_summary(bench_dir);
    repeat = read_summary(repeat_dir);
    if (!summary) bench_problem = fmt::format("no summary.json in '{}'", bench_dir.string());
    else bench_problem = scale_problem(*summary);
  }

  const std::map<int, std::function<Outcome()>> local{
      {1, gradient_correctness}, {2, double_backward}, {3, adam_oracle},
      {4, metric_oracles},       {5, ct_consistency},  {6, training_smoke}};
  const std::map<int, std::function<Outcome(const json&)>> bench{
      {7, mse_vgg_ordering}, {8, psnr_ssim_ranking}, {9, roi_sd_vote}, {10, wdistance_decay},
      {11, [&](const json& s) { return determinism(s, repeat); }}};

  bool failed = false, missing = false;
  for (int c : selected) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      if (c <= 6) {
        o = local.at(c)();
      } else if (!summary) {
        o = {false, bench_problem, true};
      } else {
        o = bench.at(c)(*summary);
        if (!bench_problem.empty()) o = {false, bench_problem + "; " + o.detail, false};
      }
    } catch (const std::exception& e) {
      o = {false, fmt::format("error: {}", e.what())};
    }
    if (!o.pass) (o.missing_artifacts ? missing : failed) = true;
    fmt::print("criterion {:2}: {}  {} [{:.1f}s]\n", c, o.pass ? "PASS" : "FAIL", o.detail, seconds_since(t0));
    std::fflush(stdout);
  }
  if (failed) return 1;
  return missing ? 77 : 0;
}
