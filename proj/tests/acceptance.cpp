// Acceptance gate. `acceptance N` runs criterion N and prints one line:
//   criterion N: PASS|FAIL <measurements>
// Exit status is 0 on PASS.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "idsp/checkpoint.hpp"
#include "idsp/config.hpp"
#include "idsp/explain.hpp"
#include "idsp/stats.hpp"
#include "idsp/synthdata.hpp"

using namespace idsp;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

struct Model {
  Fixture f;
  IdspModel model;
  SampleGraph sg;
};

Model fixture_model(std::uint64_t seed, std::size_t genes, std::size_t layers = 3) {
  Model m{random_fixture(seed, genes), {}, {}};
  ModelConfig cfg;
  cfg.d_hidden = 8;
  cfg.layers = layers;
  cfg.seed = seed;
  m.model = IdspModel(cfg, m.f.catalog.ids, random_params(cfg, m.f.catalog.size(), derive_seed(seed, 3)));
  m.sg = build_sample_graph(m.f.graph, m.f.catalog, m.f.profiles, m.f.sample, {layers, true, true});
  return m;
}

DataBundle bundle_of(PlantedWorld w) {
  DataBundle b;
  b.graph = std::move(w.graph);
  b.catalog = std::move(w.catalog);
  b.profiles = std::move(w.profiles);
  b.samples = std::move(w.samples);
  return b;
}

// Desk preset with score noise at 0.1 of the noiseless score sd.
SynthParams desk(std::uint64_t seed) {
  SynthParams p = desk_preset();
  p.seed = seed;
  p.noise_sd = 0.1 * score_sd(generate(p).samples);
  return p;
}

RunConfig synthetic_run(const SynthParams& p) {
  RunConfig rc;
  apply_config(rc, synthetic_train_config(p));
  return rc;
}

Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 20; ++k) worst = std::max(worst, fixture_grad_check(derive_seed(1, k)).max_rel_error);
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 30.0, "max_rel_error " + fmt("%.3g", worst) + " runtime " + fmt("%.1f", secs) + "s"};
}

Outcome decoder_symmetry() {
  Rng r(2);
  double worst_sym = 0.0, worst_diag = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const std::size_t d = 1 + r.below(32), rank = 1 + r.below(32);
    Tensor D(rank, d);
    for (double& v : D.values()) v = r.normal();
    std::vector<double> x1(d), x2(d);
    for (auto& v : x1) v = r.normal(0.0, 3.0);
    for (auto& v : x2) v = r.normal(0.0, 3.0);
    const double s = decode(x1, x2, D);
    worst_sym = std::max(worst_sym, std::abs(s - decode(x2, x1, D)) / std::max(1.0, std::abs(s)));
    worst_diag = std::min(worst_diag, decode(x1, x1, D));
  }
  return {worst_sym <= 1e-9 && worst_diag >= -1e-12,
          "max asymmetry " + fmt("%.3g", worst_sym) + " min decode(x,x) " + fmt("%.3g", worst_diag)};
}

Outcome normalization() {
  double worst = 0.0;
  std::size_t groups = 0, zero_groups = 0;
  bool in_range = true;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Model m = fixture_model(derive_seed(3, seed), 6 + seed % 20);
    const EdgeWeightMap w = m.model.trace(m.sg).weights;
    std::map<std::size_t, std::pair<double, double>> g;  // max v, max e
    for (std::size_t k = 0; k < w.entries.size(); ++k) {
      in_range = in_range && w.entries[k].weight >= 0.0 && w.entries[k].weight <= 1.0;
      auto& slot = g[w.group[k]];
      slot.first = std::max(slot.first, w.entries[k].weight);
      slot.second = std::max(slot.second, w.entries[k].raw);
    }
    for (const auto& [_, mx] : g) {
      ++groups;
      if (mx.second == 0.0) {
        ++zero_groups;
        worst = std::max(worst, mx.first);
      } else {
        worst = std::max(worst, std::abs(mx.first - 1.0));
      }
    }
  }
  return {worst <= 1e-12 && in_range, std::to_string(groups) + " groups (" + std::to_string(zero_groups) +
                                          " all-zero) max deviation " + fmt("%.3g", worst)};
}

Outcome permutation_invariance() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Model m = fixture_model(derive_seed(4, seed), 8 + seed % 25);
    std::vector<std::size_t> order(m.sg.node_count() - 2);
    std::iota(order.begin(), order.end(), 0);
    Rng r(seed);
    r.shuffle(order);
    worst = std::max(worst, std::abs(m.model.predict(m.sg.with_gene_order(order)) - m.model.predict(m.sg)));
  }
  return {worst <= 1e-6, "max |delta prediction| " + fmt("%.3g", worst)};
}

Outcome locality() {
  double worst = 0.0;
  std::size_t dropped = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Model m = fixture_model(derive_seed(5, seed), 40, 3);
    const SampleGraph full = build_sample_graph(m.f.graph, m.f.catalog, m.f.profiles, m.f.sample, {3, false, true});
    dropped += full.node_count() - m.sg.node_count();
    const double a = m.model.predict(m.sg), b = m.model.predict(full);
    worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
  }
  return {worst <= 1e-9, "max relative difference " + fmt("%.3g", worst) + ", " + std::to_string(dropped) +
                             " genes pruned in total"};
}

Outcome overfit() {
  const auto t0 = std::chrono::steady_clock::now();
  const SynthParams p = tiny_preset();
  const DataBundle b = bundle_of(generate(p));
  RunConfig rc = synthetic_run(p);
  rc.train.fit_all = true;
  rc.train.epochs = 2000;
  rc.train.early_stop_patience = 0;
  const TrainResult r = train(b, rc.model, rc.train);
  const auto profiles = model_profiles(b.profiles, rc.train.zscore);
  std::vector<std::size_t> all(b.samples.size());
  std::iota(all.begin(), all.end(), 0);
  const GraphSet gs = build_graphs(b.graph, b.catalog, profiles, b.samples, all, sample_options(r.model.config(), rc.train));
  const Metrics m = evaluate(r.model, gs.graphs);
  std::vector<double> y;
  for (const auto& s : b.samples) y.push_back(s.score);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  const double secs = seconds_since(t0);
  const double pr = m.pearson.value_or(0.0);
  return {pr >= 0.99 && m.mse <= 0.01 * var && secs < 120.0,
          "train pearson " + fmt("%.4f", pr) + " mse/var " + fmt("%.4f", m.mse / var) + " runtime " +
              fmt("%.1f", secs) + "s"};
}

Outcome mechanism_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<double> scores;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SynthParams p = desk(seed);
    const PlantedWorld w = generate(p);
    const auto planted = planted_pairs(w);
    const DataBundle b = bundle_of(w);
    const RunConfig rc = synthetic_run(p);
    const TrainResult r = train(b, rc.model, rc.train);
    const auto profiles = model_profiles(b.profiles, rc.train.zscore);
    const GraphSet gs = build_graphs(b.graph, b.catalog, profiles, b.samples, r.test_samples,
                                     sample_options(r.model.config(), rc.train));
    std::vector<EdgeWeightMap> maps;
    std::vector<std::string> cells;
    for (const auto& sg : gs.graphs) {
      maps.push_back(extract_importance(r.model, sg));
      cells.push_back(sg.cell_line);
    }
    scores.push_back(recovery_auroc(maps, cells, planted));
    per_seed += (per_seed.empty() ? "" : " ") + fmt("%.3f", scores.back());
  }
  const double mean = std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
  const double secs = seconds_since(t0);
  return {mean >= 0.70 && secs < 900.0,
          "mean recovery AUROC " + fmt("%.3f", mean) + " (" + per_seed + ") runtime " + fmt("%.0f", secs) + "s"};
}

Outcome inductive_trend() {
  const SynthParams p = desk(1);
  const DataBundle b = bundle_of(generate(p));
  RunConfig rc = synthetic_run(p);
  const TrainResult trans = train(b, rc.model, rc.train);
  rc.train.setting = Setting::Inductive;
  rc.train.inductive_fraction = 0.10;
  rc.train.holdout_mode = HoldoutMode::ByPathway;
  const TrainResult ind = train(b, rc.model, rc.train);
  const double pt = trans.test->pearson.value_or(0.0), pi = ind.test->pearson.value_or(0.0);
  return {std::abs(pt - pi) <= 0.10,
          "transductive pearson " + fmt("%.3f", pt) + " inductive pearson " + fmt("%.3f", pi) + " (" +
              std::to_string(ind.heldout_genes.size()) + " genes held out, " +
              std::to_string(ind.heldout_genes_in_test) + " seen at test)"};
}

// Two-sided Student t tail by composite 10-point Gauss-Legendre quadrature of
// the density on [0, |t|].
double t_tail_oracle(double t, double df) {
  static constexpr std::array<double, 5> x{0.1488743389816312, 0.4333953941292472, 0.6794095682990244,
                                           0.8650633666889845, 0.9739065285171717};
  static constexpr std::array<double, 5> w{0.2955242247147529, 0.2692667193099963, 0.2190863625159820,
                                           0.1494513491505806, 0.0666713443086881};
  const double log_c = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) - 0.5 * std::log(df * std::numbers::pi);
  auto density = [&](double u) { return std::exp(log_c - 0.5 * (df + 1.0) * std::log1p(u * u / df)); };
  const double b = std::abs(t);
  const int panels = 1000;
  const double h = b / panels;
  double integral = 0.0;
  for (int k = 0; k < panels; ++k) {
    const double mid = (k + 0.5) * h;
    for (std::size_t i = 0; i < 5; ++i)
      integral += 0.5 * h * w[i] * (density(mid + 0.5 * h * x[i]) + density(mid - 0.5 * h * x[i]));
  }
  return 1.0 - 2.0 * integral;
}

Outcome welch_numerics() {
  Rng r(9);
  double worst_t = 0.0, worst_df = 0.0, worst_p = 0.0;
  for (int k = 0; k < 50; ++k) {
    std::vector<double> a(2 + r.below(20)), b(2 + r.below(20));
    for (auto& v : a) v = r.normal(0.0, r.uniform(0.5, 3.0));
    for (auto& v : b) v = r.normal(r.normal(), r.uniform(0.5, 3.0));
    // closed form written out directly
    auto mv = [](const std::vector<double>& x) {
      const double n = static_cast<double>(x.size());
      double m = 0.0, s = 0.0;
      for (double v : x) m += v;
      m /= n;
      for (double v : x) s += (v - m) * (v - m);
      return std::pair{m, s / (n - 1.0) / n};
    };
    const auto [ma, qa] = mv(a);
    const auto [mb, qb] = mv(b);
    const double t = (ma - mb) / std::sqrt(qa + qb);
    const double df = (qa + qb) * (qa + qb) /
                      (qa * qa / static_cast<double>(a.size() - 1) + qb * qb / static_cast<double>(b.size() - 1));
    const WelchResult got = welch_t(a, b);
    worst_t = std::max(worst_t, std::abs(got.t - t) / std::max(1.0, std::abs(t)));
    worst_df = std::max(worst_df, std::abs(got.df - df) / df);
    worst_p = std::max(worst_p, std::abs(got.p - t_tail_oracle(t, df)));
  }
  const WelchResult fx = welch_t(std::vector<double>{1, 2, 3}, std::vector<double>{2, 3, 4});
  const bool fixture_ok = std::abs(fx.t + 1.2247) < 1e-4 && std::abs(fx.df - 4.0) < 1e-12;

  Rng fr(10);
  int hits = 0;
  for (int k = 0; k < 1000; ++k) {
    std::vector<double> x(10), y(10);
    for (auto& v : x) v = fr.normal();
    for (auto& v : y) v = fr.normal();
    if (welch_t(x, y).p < 0.05) ++hits;
  }
  const double rate = hits / 1000.0;
  const bool ok = worst_t <= 1e-12 && worst_df <= 1e-12 && worst_p <= 1e-10 && fixture_ok && std::abs(rate - 0.05) <= 0.02;
  return {ok, "t err " + fmt("%.2g", worst_t) + " df err " + fmt("%.2g", worst_df) + " p err " + fmt("%.2g", worst_p) +
                  " fixture t " + fmt("%.4f", fx.t) + " df " + fmt("%.3f", fx.df) + " false positive rate " +
                  fmt("%.3f", rate)};
}

std::string run_bytes(const std::filesystem::path& dir, std::string& metrics) {
  const DataBundle b = load_bundle(dir);
  RunConfig rc = synthetic_run(tiny_preset());
  rc.train.epochs = 25;
  const TrainResult r = train(b, rc.model, rc.train);
  nlohmann::json meta = r.model.meta();
  meta["best_epoch"] = r.best_epoch;
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, {r.model.params(), meta});
  metrics = metrics_json(*r.test, rc.train.setting).dump(2);
  return os.str();
}

Outcome determinism() {
  const auto dir = std::filesystem::temp_directory_path() / "idsp_acceptance_determinism";
  std::filesystem::remove_all(dir);
  write_world(generate(tiny_preset()), dir);
  std::string m1, m2;
  const std::string c1 = run_bytes(dir, m1);
  const std::string c2 = run_bytes(dir, m2);
  std::filesystem::remove_all(dir);
  return {c1 == c2 && m1 == m2, "checkpoint " + std::to_string(c1.size()) + " bytes " +
                                    (c1 == c2 ? "identical" : "differ") + ", metrics " +
                                    (m1 == m2 ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{
      gradient_correctness, decoder_symmetry, normalization,   permutation_invariance, locality,
      overfit,              mechanism_recovery, inductive_trend, welch_numerics,       determinism};
  if (argc != 2) {
    std::fprintf(stderr, "usage: acceptance N   (N = 1..%zu)\n", criteria.size());
    return 2;
  }
  const int n = std::atoi(argv[1]);
  if (n < 1 || n > static_cast<int>(criteria.size())) {
    std::fprintf(stderr, "unknown criterion %s\n", argv[1]);
    return 2;
  }
  Outcome o;
  try {
    o = criteria[n - 1]();
  } catch (const std::exception& e) {
    o = {false, std::string("error: ") + e.what()};
  }
  std::printf("criterion %d: %s %s\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str());
  return o.pass ? 0 : 1;
}
