// Acceptance suite: one PASS/FAIL line per criterion. With arguments, runs
// only the listed criterion numbers.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nsl/cli/cli.hpp"
#include "nsl/diffmath/gradcheck.hpp"
#include "nsl/diffmath/ops.hpp"
#include "nsl/losses/losses.hpp"
#include "nsl/matcher/matcher.hpp"
#include "nsl/metrics/metrics.hpp"
#include "nsl/synth/train.hpp"

using namespace nsl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

template <typename... Args>
std::string format(const char* fmt, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

// ---- 1: gradient integrity ---------------------------------------------------

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  std::vector<ad::GradCheckCase> cases = ad::core_gradchecks();
  for (auto& c : matcher::matcher_gradchecks()) cases.push_back(std::move(c));
  for (auto& c : losses::loss_gradchecks()) cases.push_back(std::move(c));
  double worst = 0;
  std::string worst_name;
  bool ok = true;
  for (const auto& c : cases) {
    const ad::GradCheckReport r = ad::run_case(c, 2024);
    ok = ok && r.checked > 0 && r.max_rel_error < 1e-4;
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.name;
    }
  }
  const ad::GradCheckReport pipe = synth::pipeline_gradcheck(2024, 1e-3, 3);
  const double secs = seconds_since(t0);
  ok = ok && pipe.checked > 0 && pipe.max_rel_error < 1e-3 && secs < 120;
  return {ok, format("%zu ops, worst %s %.2e (< 1e-4); pipeline %.2e over %zu coords (< 1e-3); %.1f s (< 120 s)",
                     cases.size(), worst_name.c_str(), worst, pipe.max_rel_error, pipe.checked, secs)};
}

// ---- 2: matching oracle ------------------------------------------------------

// Row features [h x w x w]: left(x) = s e_x, right(x + d_row) = s e_x.
std::pair<Tensor, Tensor> one_hot_rows(std::size_t h, std::size_t w, const std::vector<std::size_t>& disp) {
  const double s = 100.0;
  Tensor l({h, w, w}), r({h, w, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      l.at(y, x, x) = s;
      if (x + disp[y] < w) r.at(y, x + disp[y], x) = s;
    }
  return {l, r};
}

// Brute-force nearest neighbour of unit-normalised features.
std::vector<double> nn_oracle(const Tensor& f) {
  const std::size_t d = f.dim(0), n = f.dim(1) * f.dim(2);
  std::vector<std::vector<double>> u(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += f[c * n + i] * f[c * n + i];
    const double norm = std::max(std::sqrt(s), matcher::kNormGuard);
    for (std::size_t c = 0; c < d; ++c) u[i][c] = f[c * n + i] / norm;
  }
  std::vector<double> p(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += (u[i][c] - u[j][c]) * (u[i][c] - u[j][c]);
      p[i] = std::min(p[i], std::sqrt(s));
    }
  return p;
}

Outcome matching_oracle() {
  std::mt19937_64 rng(17);
  std::size_t coarse_checked = 0, coarse_bad = 0;
  for (const auto& [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 4}, {4, 8}, {8, 32}, {16, 64}}) {
    std::uniform_int_distribution<std::size_t> pick(0, w / 2);
    std::vector<std::size_t> disp(h);
    for (auto& d : disp) d = pick(rng);
    const auto [l, r] = one_hot_rows(h, w, disp);
    ad::Tape t;
    const Tensor d = matcher::coarse_disparity(matcher::correlation_volume(t.constant(l), t.constant(r)))
                         .disparity.value();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x + disp[y] < w; ++x) {
        ++coarse_checked;
        coarse_bad += d.at(y, x) != static_cast<double>(disp[y]);
      }
  }
  std::size_t nn_checked = 0, nn_bad = 0;
  for (const auto& s : {Shape{8, 2, 2}, Shape{8, 4, 4}, Shape{16, 8, 8}, Shape{16, 16, 16}}) {
    const Tensor f = ad::random_tensor(s, s[1] * 7 + s[0]);
    ad::Tape t;
    const Tensor p = matcher::nn_feature_distance(t.constant(f)).p.value();
    const std::vector<double> oracle = nn_oracle(f);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      ++nn_checked;
      nn_bad += p[i] != oracle[i];
    }
  }
  return {coarse_bad == 0 && nn_bad == 0,
          format("coarse disparity exact at %zu/%zu pixels up to 16x64; nn distance exact at %zu/%zu up to 16x16",
                 coarse_checked - coarse_bad, coarse_checked, nn_checked - nn_bad, nn_checked)};
}

// ---- 3: mask semantics -------------------------------------------------------

Outcome mask_semantics() {
  const Tensor m = matcher::disparity_mask(Tensor({3}, {0.1, 0.2, 0.3}), 0.2);
  const bool hand = m == Tensor({3}, {0, 0, 1});
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> u(0, 2);
  std::size_t violations = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    const Tensor p = ad::random_tensor({6, 9}, 1000 + trial, 0, 2);
    const double z1 = u(rng), z2 = z1 + u(rng);
    const Tensor a = matcher::disparity_mask(p, z1), b = matcher::disparity_mask(p, z2);
    for (std::size_t i = 0; i < p.numel(); ++i) violations += b[i] > a[i];
  }
  return {hand && violations == 0, format("hand case {0.1,0.2,0.3} @ 0.2 -> {%g,%g,%g}; %zu monotonicity "
                                          "violations over 100 maps",
                                          m[0], m[1], m[2], violations)};
}

// ---- 4: convexity ------------------------------------------------------------

Outcome convexity() {
  const double tol = 1e-9;
  std::size_t prop_bad = 0, up_bad = 0, values = 0;
  double prop_gap = 0, up_gap = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    ad::Tape t;
    const std::size_t h = 2 + trial % 4, w = 3 + trial % 5, d = 4 + trial % 3;
    const double scale = 0.5 + static_cast<double>(trial % 7);
    const Tensor f = ad::random_tensor({d, h, w}, 5000 + trial, -scale, scale);
    const Tensor dm = ad::random_tensor({h, w}, 6000 + trial, 0, 6);
    const auto [lo_it, hi_it] = std::minmax_element(dm.data().begin(), dm.data().end());
    const Tensor prop = matcher::propagate_disparity(t.constant(f), t.constant(dm)).value();
    for (double v : prop.data()) {
      const double gap = std::max(*lo_it - v, v - *hi_it);
      prop_gap = std::max(prop_gap, gap);
      prop_bad += gap > tol;
    }

    ad::ParameterStore store;
    matcher::MatcherConfig cfg;
    cfg.dim = d;
    cfg.upsample_hidden = 5;
    matcher::init_matcher_params(store, cfg, trial);
    for (auto& [name, p] : store.all())
      if (name.rfind("up.", 0) == 0) p = ad::random_tensor(p.shape(), 7000 + trial, -scale, scale);
    ad::Binding bind(t, store);
    const Tensor dr = ad::random_tensor({h, w}, 8000 + trial, 0, 6);
    const Tensor up = matcher::convex_upsample(t.constant(dr), t.constant(f), matcher::bind_upsampler(bind)).value();
    for (std::size_t y = 0; y < 4 * h; ++y)
      for (std::size_t x = 0; x < 4 * w; ++x) {
        double lo = 1e300, hi = -1e300;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(static_cast<int>(y / 4) + dy, 0, static_cast<int>(h) - 1);
            const int xx = std::clamp(static_cast<int>(x / 4) + dx, 0, static_cast<int>(w) - 1);
            lo = std::min(lo, 4 * dr.at(yy, xx));
            hi = std::max(hi, 4 * dr.at(yy, xx));
          }
        const double gap = std::max(lo - up.at(y, x), up.at(y, x) - hi);
        up_gap = std::max(up_gap, gap);
        up_bad += gap > tol;
      }
    values += prop.numel() + up.numel();
  }
  return {prop_bad == 0 && up_bad == 0,
          format("%zu values over 100 instances; worst overshoot propagation %.1e, upsampling %.1e (tol 1e-9)", values,
                 prop_gap, up_gap)};
}

// ---- 5 and 6: training on generated scenes -------------------------------------

std::vector<synth::DatasetItem> scene_set(const synth::RandomSceneOptions& o, std::uint64_t first, std::size_t n) {
  std::vector<synth::DatasetItem> items;
  for (std::size_t i = 0; i < n; ++i) {
    items.push_back(synth::gen_scene(synth::random_scene_spec(o, first + i)));
    items.back().name = synth::item_name(i);
  }
  return items;
}

synth::TrainConfig convergence_config() {
  synth::TrainConfig c;
  c.lr = 1e-3;
  c.decay_steps = 500;
  c.batch = 2;
  c.steps = 500;
  c.seed = 1;
  return c;
}

Outcome synthetic_convergence() {
  const auto t0 = Clock::now();
  const synth::RandomSceneOptions o;  // 64 x 96, random dot, integer disparities in [2, 8]
  const auto items = scene_set(o, 100, 32);
  const synth::DatasetItem held = synth::gen_scene(synth::random_scene_spec(o, 999));
  const synth::TrainConfig cfg = convergence_config();
  const synth::TrainResult r = synth::train(cfg, items, synth::init_training(cfg), cfg.steps);
  const synth::Inference inf = synth::infer(r.state.params, cfg.model, held);
  const synth::EndPointError e =
      synth::end_point_error(inf.disparity, held.truth->disparity, synth::textured_region(*held.truth), 0.75);
  const double secs = seconds_since(t0);
  return {!r.aborted && e.below >= 0.85 && secs < 900,
          format("%zu steps, %.1f%% of %zu textured pixels under 0.75 px (need >= 85%%), mean EPE %.3f px; %.0f s "
                 "(< 900 s)",
                 r.state.step, 100 * e.below, e.count, e.mean, secs)};
}

// Coarse left-feature distance, nearest-upsampled to full resolution.
Tensor distance_map(const ad::ParameterStore& params, const synth::ModelConfig& model,
                    const synth::DatasetItem& item) {
  ad::ParameterStore copy = params;
  ad::Tape t;
  ad::Binding bind(t, copy, [](const std::string&) { return false; });
  const synth::ModelOutput out = synth::forward(bind, model, {item.left, item.right});
  return matcher::upsample_nearest(out.match.distance.p.value(), 8);
}

Outcome regularizer_effect() {
  synth::RandomSceneOptions o;
  o.sky_fraction = 0.25;
  const auto items = scene_set(o, 300, 32);
  const synth::DatasetItem held = synth::gen_scene(synth::random_scene_spec(o, 998));
  const Tensor region = synth::textured_region(*held.truth);
  double p_mean[2], epe[2];
  for (int with = 0; with < 2; ++with) {
    synth::TrainConfig cfg = convergence_config();
    cfg.steps = 300;
    cfg.decay_steps = 300;
    cfg.loss.beta1 = with ? 1.0 : 0.0;
    const synth::TrainResult r = synth::train(cfg, items, synth::init_training(cfg), cfg.steps);
    const Tensor p = distance_map(r.state.params, cfg.model, held);
    double s = 0, n = 0;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      s += region[i] * p[i];
      n += region[i];
    }
    p_mean[with] = s / n;
    const synth::Inference inf = synth::infer(r.state.params, cfg.model, held);
    epe[with] = synth::end_point_error(inf.disparity, held.truth->disparity, region, 0.75).mean;
  }
  return {p_mean[1] > p_mean[0] && epe[1] < epe[0],
          format("textured nn distance %.4f (beta1=1) vs %.4f (beta1=0); textured EPE %.3f vs %.3f px", p_mean[1],
                 p_mean[0], epe[1], epe[0])};
}

// ---- 7: depth aggregation oracle ----------------------------------------------

struct OracleValues {
  metrics::Values unweighted{}, weighted{};
  bool empty = true;
};

OracleValues aggregation_oracle(const std::vector<double>& pred, const std::vector<double>& gt, std::size_t m,
                                double max_depth) {
  std::map<std::size_t, std::vector<metrics::Values>> by_bin;
  std::vector<metrics::Values> all;
  const double width = max_depth / static_cast<double>(m);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = gt[i];
    if (!(g > 0) || g > max_depth) continue;
    const double p = std::clamp(pred[i] > 0 ? pred[i] : max_depth, metrics::kMinPredDepth, max_depth);
    metrics::Values v{};
    v[0] = std::abs(p - g) / g;
    v[1] = (p - g) * (p - g) / g;
    v[2] = (p - g) * (p - g);
    v[3] = std::pow(std::log(p) - std::log(g), 2);
    const double ratio = std::max(p / g, g / p);
    v[4] = ratio < 1.25;
    v[5] = ratio < 1.25 * 1.25;
    v[6] = ratio < 1.25 * 1.25 * 1.25;
    std::size_t bin = 0;
    for (std::size_t b = 0; b < m; ++b)
      if (g > width * static_cast<double>(b)) bin = b;
    by_bin[bin].push_back(v);
    all.push_back(v);
  }
  OracleValues out;
  if (all.empty()) return out;
  out.empty = false;
  for (std::size_t k = 0; k < metrics::kMetricCount; ++k) {
    double s = 0;
    for (const auto& v : all) s += v[k];
    out.unweighted[k] = s / static_cast<double>(all.size());
    double outer = 0;
    for (const auto& [b, vs] : by_bin) {
      double inner = 0;
      for (const auto& v : vs) inner += v[k];
      outer += inner / static_cast<double>(vs.size());
    }
    out.weighted[k] = outer / static_cast<double>(by_bin.size());
  }
  return out;
}

metrics::PixelTerms terms_of(const std::vector<double>& pred, const std::vector<double>& gt, double max_depth) {
  return metrics::per_pixel_metrics(Tensor({pred.size()}, pred), Tensor({gt.size()}, gt), Tensor({gt.size()}, 1.0),
                                    max_depth);
}

Outcome aggregation() {
  std::mt19937_64 rng(77);
  double worst = 0;
  std::size_t mismatched_empty = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double max_depth = std::uniform_real_distribution<double>(5, 80)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, 12)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 300)(rng);
    std::uniform_real_distribution<double> g(-0.1 * max_depth, 1.2 * max_depth), ratio(0.3, 2.5);
    std::vector<double> pred(n), gt(n);
    for (std::size_t i = 0; i < n; ++i) {
      gt[i] = g(rng);
      pred[i] = std::abs(gt[i]) * ratio(rng);
    }
    const OracleValues o = aggregation_oracle(pred, gt, m, max_depth);
    const metrics::PixelTerms t = terms_of(pred, gt, max_depth);
    const metrics::Aggregate u = metrics::aggregate_unweighted(t);
    const metrics::WeightedAggregate w = metrics::aggregate_weighted(t, m, max_depth);
    if (o.empty != u.empty || o.empty != w.overall.empty) ++mismatched_empty;
    if (o.empty) continue;
    for (std::size_t k = 0; k < metrics::kMetricCount; ++k) {
      worst = std::max(worst, std::abs(u.pre_root[k] - o.unweighted[k]) / std::max(1.0, std::abs(o.unweighted[k])));
      worst = std::max(worst, std::abs(w.overall.pre_root[k] - o.weighted[k]) / std::max(1.0, std::abs(o.weighted[k])));
    }
  }

  // Hand case: 90 pixels at abs rel 0.1 in one bin, 10 at 0.5 in another.
  std::vector<double> pred, gt;
  for (int i = 0; i < 90; ++i) {
    gt.push_back(3.0);
    pred.push_back(3.0 * 0.9);
  }
  for (int i = 0; i < 10; ++i) {
    gt.push_back(42.0);
    pred.push_back(42.0 * 0.5);
  }
  const metrics::PixelTerms hand = terms_of(pred, gt, 50);
  const double hu = metrics::aggregate_unweighted(hand).value[0];
  const double hw = metrics::aggregate_weighted(hand, 10, 50).overall.value[0];
  const bool hand_ok = std::abs(hu - 0.14) < 1e-15 && std::abs(hw - 0.30) < 1e-15;

  // Equal counts per bin: U = W.
  std::vector<double> p2, g2;
  for (std::size_t b = 0; b < 10; ++b)
    for (std::size_t i = 0; i < 7; ++i) {
      const double depth = 1.0 + 5.0 * static_cast<double>(b) + 0.5 * static_cast<double>(i);
      g2.push_back(depth);
      p2.push_back(depth * (0.7 + 0.05 * static_cast<double>((b * 7 + i) % 9)));
    }
  const metrics::PixelTerms eq = terms_of(p2, g2, 50);
  std::vector<std::size_t> counts = metrics::aggregate_weighted(eq, 10, 50).table.counts;
  const bool equal_counts = std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 7; });
  // With equal counts the mean of bin means is the pixel mean; compare with
  // an independent per-bin sum.
  double eq_gap = 0;
  const metrics::Aggregate eu = metrics::aggregate_unweighted(eq);
  const metrics::WeightedAggregate ew = metrics::aggregate_weighted(eq, 10, 50);
  for (std::size_t k = 0; k < metrics::kMetricCount; ++k)
    eq_gap = std::max(eq_gap, std::abs(eu.pre_root[k] - ew.overall.pre_root[k]));

  return {worst <= 1e-12 && mismatched_empty == 0 && hand_ok && equal_counts && eq_gap <= 1e-12,
          format("1000 instances, worst pre-root gap %.1e (<= 1e-12); hand case U=%.17g W=%.17g; equal-count |U-W| "
                 "%.1e",
                 worst, hu, hw, eq_gap)};
}

// ---- 8: loss identities ------------------------------------------------------

Outcome loss_identities() {
  ad::Tape t;
  ad::Var img = t.constant(ad::random_tensor({3, 16, 24}, 41, 0, 1));
  const double photo = losses::photometric_loss(img, img, t.constant(Tensor({16, 24}, 0.0))).loss.value().item();
  const double one = losses::distance_regularizer(t.constant(Tensor({6, 9}, 1.0))).value().item();
  losses::LossConfig cfg;
  cfg.gamma = 2.0;
  const double half = losses::distance_regularizer(t.constant(Tensor({6, 9}, 0.5)), cfg).value().item();
  const double half_gap = std::abs(half - 0.25 * std::log(2.0));
  const double total = losses::total_loss(0.3, 0.2, 0.5);
  const bool total_ok = total == 0.3 + 1.0 * 0.2 + 0.1 * 0.5 && std::abs(total - 0.55) < 1e-15;
  return {photo < 1e-6 && one == 0.0 && half_gap < 1e-12 && total_ok,
          format("photo(I,I,0)=%.1e; reg(1)=%g; |reg(0.5)-ln2/4|=%.1e; total(0.3,0.2,0.5)=%.17g", photo, one,
                 half_gap, total)};
}

// ---- 9: reproducibility ------------------------------------------------------

int nsl_run(const std::vector<std::string>& args) {
  std::vector<std::string> all = {"nsl"};
  all.insert(all.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : all) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::string body{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    // Manifests record the output directory, which is the one intended difference.
    for (std::size_t k; (k = body.find(dir.string())) != std::string::npos;) body.replace(k, dir.string().size(), "@");
    files[fs::relative(e.path(), dir).string()] = body;
  }
  return files;
}

Outcome reproducibility() {
  const fs::path base = fs::temp_directory_path() / "nsl_acceptance_repro";
  fs::remove_all(base);
  const std::vector<std::string> model = {"--height", "32", "--width", "48", "--D", "16", "--upsample-hidden", "8",
                                          "--radius", "4", "--seed", "5"};
  std::map<std::string, std::string> runs[2];
  bool codes_ok = true;
  for (int k = 0; k < 2; ++k) {
    const fs::path dir = base / (k == 0 ? "a" : "b");
    fs::create_directories(dir);
    std::ofstream(dir / "scenes.txt") << "count = 4\nseed = 3\nheight = 32\nwidth = 48\n";
    const std::string d = dir.string();
    auto with_model = [&](std::vector<std::string> args) {
      args.insert(args.end(), model.begin(), model.end());
      return args;
    };
    codes_ok = codes_ok && nsl_run({"synth", "--spec", d + "/scenes.txt", "--out", d + "/ds"}) == 0;
    codes_ok = codes_ok && nsl_run(with_model({"train", "--dataset", d + "/ds", "--out", d + "/train", "--steps", "3",
                                               "--lr", "1e-3"})) == 0;
    codes_ok = codes_ok && nsl_run({"infer", "--dataset", d + "/ds", "--checkpoint", d + "/train/checkpoint", "--out",
                                    d + "/infer"}) == 0;
    codes_ok = codes_ok && nsl_run({"eval", "--dataset", d + "/ds", "--checkpoint", d + "/train/checkpoint", "--out",
                                    d + "/eval"}) == 0;
    codes_ok = codes_ok && nsl_run({"gradcheck", "--out", d + "/grad"}) == 0;
    runs[k] = snapshot(dir);
  }
  std::size_t differing = 0;
  for (const auto& [name, body] : runs[0]) {
    const auto it = runs[1].find(name);
    differing += it == runs[1].end() || it->second != body;
  }
  differing += runs[0].size() != runs[1].size();
  fs::remove_all(base);
  return {codes_ok && differing == 0 && runs[0].size() > 10,
          format("synth, train, infer, eval, gradcheck twice: %zu artifacts, %zu differ", runs[0].size(), differing)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient integrity", gradient_integrity},
      {"matching oracle", matching_oracle},
      {"mask threshold semantics", mask_semantics},
      {"propagation and upsampling convexity", convexity},
      {"synthetic convergence", synthetic_convergence},
      {"distance regularizer effect", regularizer_effect},
      {"depth aggregation oracle", aggregation},
      {"loss identities", loss_identities},
      {"reproducibility", reproducibility},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
