#pragma once

// Training loop, fold splits, and the transductive / inductive protocols.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsp/adam.hpp"
#include "idsp/error.hpp"
#include "idsp/graphdata.hpp"
#include "idsp/metrics.hpp"
#include "idsp/model.hpp"
#include "idsp/random.hpp"

namespace idsp {

enum class HoldoutMode { ByGene, ByPathway };
enum class Setting { Transductive, Inductive };

inline const char* to_string(HoldoutMode m) { return m == HoldoutMode::ByGene ? "by_gene" : "by_pathway"; }
inline const char* to_string(Setting s) { return s == Setting::Inductive ? "inductive" : "transductive"; }

inline HoldoutMode parse_holdout_mode(std::string_view s) {
  if (s == "by_gene") return HoldoutMode::ByGene;
  if (s == "by_pathway") return HoldoutMode::ByPathway;
  throw UsageError("holdout mode must be by_gene or by_pathway, got '" + std::string(s) + "'");
}

inline Setting parse_setting(std::string_view s) {
  if (s == "transductive") return Setting::Transductive;
  if (s == "inductive") return Setting::Inductive;
  throw UsageError("setting must be transductive or inductive, got '" + std::string(s) + "'");
}

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t folds = 5;
  std::size_t test_fold = 0;  // validation uses fold (test_fold + 1) % folds
  Setting setting = Setting::Transductive;
  double inductive_fraction = 0.10;
  HoldoutMode holdout_mode = HoldoutMode::ByPathway;
  std::size_t early_stop_patience = 30;  // epochs without validation improvement; 0 disables
  bool fit_all = false;                  // train on every sample, no validation or test split
  bool zscore = true;                    // per-gene z-score of profiles across cell lines
  bool undirected_genes = true;
  bool prune = true;
  bool pearson_per_cell_line = false;
  std::size_t threads = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (folds < 2) throw UsageError("train: folds must be >= 2");
    if (test_fold >= folds) throw UsageError("train: test_fold must be < folds");
    if (!(inductive_fraction >= 0.0 && inductive_fraction < 1.0))
      throw UsageError("train: inductive_fraction must lie in [0, 1)");
    if (setting == Setting::Inductive && inductive_fraction <= 0.0)
      throw UsageError("train: the inductive setting needs inductive_fraction > 0");
    if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
    if (lr < 0.0) throw UsageError("train: lr must be >= 0");
    if (threads < 1) throw UsageError("train: threads must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"folds", c.folds},
       {"test_fold", c.test_fold},
       {"setting", to_string(c.setting)},
       {"inductive_fraction", c.inductive_fraction},
       {"holdout_mode", to_string(c.holdout_mode)},
       {"early_stop_patience", c.early_stop_patience},
       {"fit_all", c.fit_all},
       {"zscore", c.zscore},
       {"undirected_genes", c.undirected_genes},
       {"prune", c.prune},
       {"pearson_per_cell_line", c.pearson_per_cell_line},
       {"threads", c.threads},
       {"seed", c.seed}};
}

// ---- splits ------------------------------------------------------------------

/// Seeded shuffle of 0..n-1 dealt into k folds; the first n % k folds get one
/// extra sample. Each fold is sorted ascending.
inline std::vector<std::vector<std::size_t>> split_folds(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw UsageError("split_folds: k must be >= 2");
  if (n < k) throw DataError("split_folds: " + std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xf01d));
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> folds(k);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                    order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

struct HoldoutSplit {
  SignalingGraph train_view;
  std::set<std::string> heldout;            // gene ids absent from train_view
  std::vector<std::string> withheld_pathways;  // by_pathway only, in removal order
};

/// Removes a seeded share of the network for inductive training.
///
/// by_pathway withholds whole pathways in seeded order until at least
/// `fraction` of all genes are held out; genes that also belong to a retained
/// pathway stay. by_gene removes ceil(fraction * genes) uniformly chosen
/// genes. With a catalog, a split that leaves no drug with a target is
/// rejected.
inline HoldoutSplit gene_holdout(const SignalingGraph& graph, double fraction, HoldoutMode mode,
                                 std::uint64_t seed, const DrugCatalog* catalog = nullptr) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw UsageError("gene_holdout: fraction must lie in (0, 1)");
  const double n = static_cast<double>(graph.gene_count());
  const auto needed = static_cast<std::size_t>(std::ceil(fraction * n - 1e-9));
  Rng rng(derive_seed(seed, 0x401d));
  HoldoutSplit out;
  if (mode == HoldoutMode::ByGene) {
    std::vector<GeneIndex> genes(graph.gene_count());
    for (GeneIndex g = 0; g < genes.size(); ++g) genes[g] = g;
    rng.shuffle(genes);
    for (std::size_t i = 0; i < needed && i < genes.size(); ++i) out.heldout.insert(graph.gene_id(genes[i]));
  } else {
    std::vector<std::size_t> order(graph.pathway_count());
    for (std::size_t p = 0; p < order.size(); ++p) order[p] = p;
    rng.shuffle(order);
    std::vector<bool> withheld(graph.pathway_count(), false);
    for (std::size_t p : order) {
      if (out.heldout.size() >= needed && !out.withheld_pathways.empty()) break;
      withheld[p] = true;
      out.withheld_pathways.push_back(graph.pathway_id(p));
      for (GeneIndex g : graph.pathway_members(p)) {
        const auto& pw = graph.gene_pathways(g);
        if (std::all_of(pw.begin(), pw.end(), [&](std::size_t q) { return withheld[q]; }))
          out.heldout.insert(graph.gene_id(g));
      }
    }
  }
  if (out.heldout.size() == graph.gene_count()) throw DataError("gene_holdout: split removes every gene");
  if (catalog) {
    bool any = false;
    for (const auto& targets : catalog->targets)
      for (const auto& t : targets) any = any || !out.heldout.contains(t);
    if (!any) throw DataError("gene_holdout: split removes every target of every drug");
  }
  out.train_view = graph.without_genes(out.heldout);
  return out;
}

// ---- evaluation ----------------------------------------------------------------

/// Prediction for every graph, ascending order.
inline std::vector<double> predict_all(const IdspModel& model, const std::vector<SampleGraph>& graphs) {
  std::vector<double> preds;
  preds.reserve(graphs.size());
  for (const auto& sg : graphs) preds.push_back(model.predict(sg));
  return preds;
}

inline Metrics evaluate(const IdspModel& model, const std::vector<SampleGraph>& graphs) {
  std::vector<double> targets;
  targets.reserve(graphs.size());
  for (const auto& sg : graphs) targets.push_back(sg.score);
  return compute_metrics(predict_all(model, graphs), targets);
}

/// Profiles as the model sees them (optionally z-scored).
inline CellLineProfiles model_profiles(const CellLineProfiles& raw, bool zscore) {
  return zscore ? zscore_across_cells(raw) : raw;
}

inline SampleGraphOptions sample_options(const ModelConfig& mc, const TrainConfig& tc) {
  return {mc.layers, tc.prune, tc.undirected_genes};
}

struct GraphSet {
  std::vector<SampleGraph> graphs;
  std::vector<std::size_t> sample_index;  // into the bundle's samples
  std::size_t excluded = 0;               // drugs without any target in the view
};

inline GraphSet build_graphs(const SignalingGraph& graph, const DrugCatalog& catalog,
                             const CellLineProfiles& profiles, const std::vector<SynergySample>& samples,
                             const std::vector<std::size_t>& indices, const SampleGraphOptions& opt) {
  GraphSet out;
  for (std::size_t i : indices) {
    const auto& s = samples[i];
    if (resolve_targets(graph, catalog, s.drug_a).empty() || resolve_targets(graph, catalog, s.drug_b).empty()) {
      ++out.excluded;
      continue;
    }
    out.graphs.push_back(build_sample_graph(graph, catalog, profiles, s, opt));
    out.sample_index.push_back(i);
  }
  return out;
}

// ---- training ------------------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;
  double train_pearson = std::numeric_limits<double>::quiet_NaN();
  double val_mse = std::numeric_limits<double>::quiet_NaN();
  double val_pearson = std::numeric_limits<double>::quiet_NaN();
  friend bool operator==(const EpochRecord& a, const EpochRecord& b) {
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    return a.epoch == b.epoch && same(a.train_mse, b.train_mse) && same(a.train_pearson, b.train_pearson) &&
           same(a.val_mse, b.val_mse) && same(a.val_pearson, b.val_pearson);
  }
};

struct TrainResult {
  IdspModel model;                 // best-validation parameters (final ones when fit_all)
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  std::optional<Metrics> test;     // absent when fit_all
  std::vector<std::size_t> train_samples, val_samples, test_samples;
  std::size_t excluded_samples = 0;
  std::vector<std::string> heldout_genes;
  std::vector<std::string> withheld_pathways;
  std::size_t heldout_genes_in_test = 0;  // held-out genes present in some test graph
};

/// One optimization pass over `graphs` in the given order. Returns the
/// pre-update prediction of every visited sample, in visiting order.
/// Per-sample gradients may be computed on several threads but are always
/// summed in batch order.
inline std::vector<double> run_epoch(IdspModel& model, const std::vector<SampleGraph>& graphs,
                                     const std::vector<std::size_t>& order, AdamState& state,
                                     const TrainConfig& tc, std::size_t epoch) {
  const AdamOptions opt{tc.lr, 0.9, 0.999, 1e-8, tc.weight_decay};
  std::vector<double> preds(order.size());
  const std::size_t nb = (order.size() + tc.batch_size - 1) / tc.batch_size;
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = b * tc.batch_size;
    const std::size_t hi = std::min(order.size(), lo + tc.batch_size);
    std::vector<ParamStore> grads(hi - lo);
    auto work = [&](std::size_t k) {
      const SampleGraph& sg = graphs[order[lo + k]];
      const auto rows = model.drug_rows(sg);
      Tape t(model.params());
      ForwardVars f = build_forward(t, sg, model.config(), rows);
      Var loss = t.squared_error(f.score, t.constant(Tensor::scalar(sg.score)));
      t.backward(loss);
      preds[lo + k] = t.scalar(f.score);
      grads[k] = t.gradients();
    };
    try {
      if (tc.threads <= 1 || grads.size() < 2) {
        for (std::size_t k = 0; k < grads.size(); ++k) work(k);
      } else {
        std::vector<std::exception_ptr> errors(tc.threads);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < tc.threads; ++w) {
          pool.emplace_back([&, w] {
            try {
              for (std::size_t k = w; k < grads.size(); k += tc.threads) work(k);
            } catch (...) {
              errors[w] = std::current_exception();
            }
          });
        }
        for (auto& th : pool) th.join();
        for (auto& e : errors)
          if (e) std::rethrow_exception(e);
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                         std::to_string(b) + ": " + e.what());
    }
    ParamStore total = model.params().zeros_like();
    const double inv = 1.0 / static_cast<double>(grads.size());
    for (const auto& g : grads) {
      for (auto& [name, t] : total) {
        const Tensor& gt = g.at(name);
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += gt[i] * inv;
      }
    }
    adam_step(model.params(), total, state, opt);
    for (const auto& [name, t] : model.params()) {
      if (!t.all_finite())
        throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b) + ": non-finite parameter " + name);
    }
  }
  return preds;
}

/// Trains on pre-built graphs. Early stopping and checkpoint selection use
/// `val`; pass an empty `val` to keep the final parameters.
inline TrainResult fit(IdspModel model, const std::vector<SampleGraph>& train,
                       const std::vector<SampleGraph>& val, const TrainConfig& tc,
                       const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train.empty()) throw DataError("train: no training samples");
  TrainResult out;
  AdamState state;
  IdspModel best = model;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<double> targets;
  for (const auto& sg : train) targets.push_back(sg.score);

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(tc.seed, 0xe90c0000ULL + epoch));
    rng.shuffle(order);
    const auto preds = run_epoch(model, train, order, state, tc, epoch);

    EpochRecord rec;
    rec.epoch = epoch;
    std::vector<double> ordered_targets(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) ordered_targets[i] = targets[order[i]];
    const Metrics tm = compute_metrics(preds, ordered_targets);
    rec.train_mse = tm.mse;
    if (tm.pearson) rec.train_pearson = *tm.pearson;
    if (!val.empty()) {
      const Metrics vm = evaluate(model, val);
      rec.val_mse = vm.mse;
      if (vm.pearson) rec.val_pearson = *vm.pearson;
      if (vm.mse < best_val) {
        best_val = vm.mse;
        best = model;
        out.best_epoch = epoch;
        since_best = 0;
      } else {
        ++since_best;
      }
    }
    out.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!val.empty() && tc.early_stop_patience > 0 && since_best >= tc.early_stop_patience) break;
  }
  if (val.empty()) {
    out.model = std::move(model);
    out.best_epoch = out.history.empty() ? 0 : out.history.back().epoch;
  } else {
    out.model = std::move(best);
  }
  return out;
}

/// Full protocol on a loaded bundle: fold split, optional gene holdout,
/// training with early stopping, and test metrics on the full network.
inline TrainResult train(const DataBundle& data, const ModelConfig& mc, const TrainConfig& tc,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  tc.validate();
  ModelConfig cfg = mc;
  const CellLineProfiles profiles = model_profiles(data.profiles, tc.zscore);
  cfg.d_in = 2 + profiles.feature_count();
  const SampleGraphOptions sopt = sample_options(cfg, tc);

  std::vector<std::size_t> train_idx, val_idx, test_idx;
  if (tc.fit_all) {
    for (std::size_t i = 0; i < data.samples.size(); ++i) train_idx.push_back(i);
  } else {
    const auto folds = split_folds(data.samples.size(), tc.folds, tc.seed);
    const std::size_t vf = (tc.test_fold + 1) % tc.folds;
    for (std::size_t f = 0; f < tc.folds; ++f) {
      auto& dst = f == tc.test_fold ? test_idx : f == vf ? val_idx : train_idx;
      dst.insert(dst.end(), folds[f].begin(), folds[f].end());
    }
    std::sort(train_idx.begin(), train_idx.end());
  }

  TrainResult out;
  const SignalingGraph* view = &data.graph;
  HoldoutSplit split;
  if (tc.setting == Setting::Inductive) {
    split = gene_holdout(data.graph, tc.inductive_fraction, tc.holdout_mode, tc.seed, &data.catalog);
    view = &split.train_view;
    out.heldout_genes.assign(split.heldout.begin(), split.heldout.end());
    out.withheld_pathways = split.withheld_pathways;
  }
  GraphSet train_set = build_graphs(*view, data.catalog, profiles, data.samples, train_idx, sopt);
  GraphSet val_set = build_graphs(*view, data.catalog, profiles, data.samples, val_idx, sopt);
  GraphSet test_set = build_graphs(data.graph, data.catalog, profiles, data.samples, test_idx, sopt);

  IdspModel model(cfg, data.catalog.ids);
  TrainResult fitted = fit(std::move(model), train_set.graphs, val_set.graphs, tc, on_epoch);
  out.model = std::move(fitted.model);
  out.history = std::move(fitted.history);
  out.best_epoch = fitted.best_epoch;
  out.train_samples = train_set.sample_index;
  out.val_samples = val_set.sample_index;
  out.test_samples = test_set.sample_index;
  out.excluded_samples = train_set.excluded + val_set.excluded;
  if (!test_set.graphs.empty()) {
    std::vector<double> preds = predict_all(out.model, test_set.graphs);
    std::vector<double> targets;
    std::vector<std::string> cells;
    for (const auto& sg : test_set.graphs) {
      targets.push_back(sg.score);
      cells.push_back(sg.cell_line);
    }
    Metrics m = compute_metrics(preds, targets);
    if (tc.pearson_per_cell_line) m.pearson = pearson_per_cell_line(preds, targets, cells);
    out.test = m;
  }
  if (!split.heldout.empty()) {
    std::set<std::string> seen;
    for (const auto& sg : test_set.graphs)
      for (std::size_t i = 2; i < sg.node_count(); ++i)
        if (split.heldout.contains(sg.labels[i])) seen.insert(sg.labels[i]);
    out.heldout_genes_in_test = seen.size();
  }
  return out;
}

// ---- outputs -------------------------------------------------------------------

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << "epoch,train_mse,train_pearson,val_mse,val_pearson\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << format_real(r.train_mse) << ',' << format_real(r.train_pearson) << ','
       << format_real(r.val_mse) << ',' << format_real(r.val_pearson) << '\n';
  }
}

inline nlohmann::json metrics_json(const Metrics& m, Setting setting) {
  nlohmann::json j;
  j["mse"] = m.mse;
  j["pearson"] = m.pearson ? nlohmann::json(*m.pearson) : nlohmann::json(nullptr);
  j["n"] = m.n;
  j["setting"] = to_string(setting);
  return j;
}

}  // namespace idsp
