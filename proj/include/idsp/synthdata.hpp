#pragma once

// Synthetic worlds with a planted, cell-line-specific mechanism.
//
// Score rule: for drugs d1, d2 on cell line c,
//   score = sum over planted edges (u, w) of c that lie on a simple undirected
//           path of at most 3 gene-gene edges from a target of d1 to a target
//           of d2, of expression(c, u) * expression(c, w)
//         + N(0, noise_sd^2).
// Copy number marks the mechanism: 1 + N(0, 0.1^2) on endpoints of planted
// edges of that cell line, N(0, 0.1^2) elsewhere.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <cmath>
#include <utility>
#include <vector>

#include "idsp/error.hpp"
#include "idsp/graphdata.hpp"
#include "idsp/model.hpp"
#include "idsp/random.hpp"
#include "idsp/training.hpp"

namespace idsp {

inline constexpr std::size_t kPlantedPathHops = 3;

struct SynthParams {
  std::size_t n_genes = 200;
  std::size_t n_pathways = 8;
  std::size_t n_drugs = 20;
  std::size_t n_cells = 5;
  std::size_t n_samples = 800;
  double planted_fraction = 0.05;
  double noise_sd = 0.0;
  double marker_sd = 0.1;  // spread of the copy-number marker
  std::uint64_t seed = 1;

  void validate() const {
    if (n_genes < 2 || n_pathways < 1 || n_drugs < 2 || n_cells < 1 || n_samples < 1)
      throw UsageError("gen: counts must be positive (at least 2 genes and 2 drugs)");
    if (n_pathways > n_genes) throw UsageError("gen: more pathways than genes");
    if (!(planted_fraction > 0.0 && planted_fraction < 1.0))
      throw UsageError("gen: planted_fraction must lie in (0, 1)");
    if (noise_sd < 0.0) throw UsageError("gen: noise_sd must be >= 0");
    const std::size_t combos = n_drugs * (n_drugs - 1) / 2 * n_cells;
    if (n_samples > combos)
      throw UsageError("gen: " + std::to_string(n_samples) + " samples requested but only " +
                       std::to_string(combos) + " distinct (pair, cell line) combinations exist");
  }
};

/// 200 genes, 8 pathways, 20 drugs, 5 cell lines, 800 samples.
inline SynthParams desk_preset() { return SynthParams{}; }

/// 40 genes, 4 pathways, 8 drugs, 3 cell lines, 64 samples.
inline SynthParams tiny_preset() {
  SynthParams p;
  p.n_genes = 40;
  p.n_pathways = 4;
  p.n_drugs = 8;
  p.n_cells = 3;
  p.n_samples = 64;
  p.planted_fraction = 0.15;
  return p;
}

struct PlantedWorld {
  SignalingGraph graph;
  DrugCatalog catalog;
  CellLineProfiles profiles;
  std::vector<SynergySample> samples;
  std::map<std::string, std::set<std::size_t>> planted;  // cell line -> indices into graph.edges()
  double noise_sd = 0.0;
};

namespace detail {

inline std::string padded(const char* prefix, std::size_t i, std::size_t width) {
  std::string s = std::to_string(i);
  if (s.size() < width) s.insert(0, width - s.size(), '0');
  return prefix + s;
}

inline std::size_t digits(std::size_t n) { return std::to_string(n).size(); }

inline bool connected(const SignalingGraph& g) {
  if (g.gene_count() == 0) return true;
  std::vector<bool> seen(g.gene_count(), false);
  std::vector<GeneIndex> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const GeneIndex u = stack.back();
    stack.pop_back();
    for (GeneIndex w : g.neighbors(u)) {
      if (!seen[w]) {
        seen[w] = true;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == g.gene_count();
}

}  // namespace detail

/// Indices (into graph.edges()) of `candidate` edges lying on a simple path
/// of at most kPlantedPathHops undirected edges from some gene in `from` to
/// some gene in `to`. Found by depth-first enumeration of simple paths.
inline std::set<std::size_t> edges_on_short_paths(const SignalingGraph& graph,
                                                  const std::vector<GeneIndex>& from,
                                                  const std::vector<GeneIndex>& to,
                                                  const std::set<std::size_t>& candidate) {
  std::map<std::pair<GeneIndex, GeneIndex>, std::vector<std::size_t>> by_pair;
  for (std::size_t e : candidate) {
    const auto& edge = graph.edges()[e];
    by_pair[std::minmax(edge.src, edge.dst)].push_back(e);
  }
  std::vector<bool> is_target(graph.gene_count(), false);
  for (GeneIndex t : to) is_target[t] = true;

  std::set<std::size_t> out;
  std::vector<GeneIndex> path;
  std::vector<bool> on_path(graph.gene_count(), false);
  auto record = [&] {
    for (std::size_t k = 0; k + 1 < path.size(); ++k) {
      auto it = by_pair.find(std::minmax(path[k], path[k + 1]));
      if (it != by_pair.end()) out.insert(it->second.begin(), it->second.end());
    }
  };
  std::function<void(GeneIndex)> dfs = [&](GeneIndex u) {
    if (path.size() > 1 && is_target[u]) record();
    if (path.size() > kPlantedPathHops) return;
    for (GeneIndex w : graph.neighbors(u)) {
      if (on_path[w]) continue;
      on_path[w] = true;
      path.push_back(w);
      dfs(w);
      path.pop_back();
      on_path[w] = false;
    }
  };
  for (GeneIndex s : from) {
    path = {s};
    on_path[s] = true;
    dfs(s);
    on_path[s] = false;
  }
  return out;
}

/// Noiseless score of a drug pair on a cell line under the planted rule.
inline double planted_score(const SignalingGraph& graph, const DrugCatalog& catalog,
                            const CellLineProfiles& raw_profiles,
                            const std::map<std::string, std::set<std::size_t>>& planted,
                            const std::string& drug_a, const std::string& drug_b, const std::string& cell) {
  const auto ta = resolve_targets(graph, catalog, drug_a);
  const auto tb = resolve_targets(graph, catalog, drug_b);
  auto it = planted.find(cell);
  if (it == planted.end()) return 0.0;
  const std::size_t c = raw_profiles.cell_index.at(cell);
  double score = 0.0;
  for (std::size_t e : edges_on_short_paths(graph, ta, tb, it->second)) {
    const auto& edge = graph.edges()[e];
    score += raw_profiles.values[c](edge.src, 0) * raw_profiles.values[c](edge.dst, 0);
  }
  return score;
}

inline PlantedWorld generate(const SynthParams& p) {
  p.validate();
  Rng rng(p.seed);
  PlantedWorld w;
  w.noise_sd = p.noise_sd;
  SignalingGraph& g = w.graph;

  const std::size_t gw = detail::digits(p.n_genes);
  std::vector<std::size_t> home(p.n_genes);
  std::vector<std::vector<GeneIndex>> members(p.n_pathways);
  for (std::size_t i = 0; i < p.n_pathways; ++i) g.add_pathway(detail::padded("P", i + 1, detail::digits(p.n_pathways)));
  for (std::size_t i = 0; i < p.n_genes; ++i) {
    const GeneIndex gi = g.add_gene(detail::padded("G", i + 1, gw), detail::padded("SYM", i + 1, gw));
    home[i] = i * p.n_pathways / p.n_genes;
    g.add_membership(gi, home[i]);
    members[home[i]].push_back(gi);
  }
  // A few genes shared with the next pathway.
  if (p.n_pathways > 1) {
    for (GeneIndex i = 0; i < p.n_genes; ++i) {
      if (rng.uniform() < 0.1) g.add_membership(i, (home[i] + 1) % p.n_pathways);
    }
  }

  std::set<std::pair<GeneIndex, GeneIndex>> used;
  auto try_edge = [&](GeneIndex a, GeneIndex b, std::size_t pathway) {
    if (a == b || !used.insert(std::minmax(a, b)).second) return false;
    if (rng.uniform() < 0.5) std::swap(a, b);
    g.add_edge(a, b, pathway);
    return true;
  };
  // Preferential attachment inside each pathway.
  for (std::size_t pw = 0; pw < p.n_pathways; ++pw) {
    const auto& m = members[pw];
    std::vector<double> degree(m.size(), 0.0);
    for (std::size_t i = 1; i < m.size(); ++i) {
      const std::size_t links = std::min<std::size_t>(i, 2);
      std::set<std::size_t> chosen;
      while (chosen.size() < links) {
        double total = 0.0;
        for (std::size_t j = 0; j < i; ++j)
          if (!chosen.contains(j)) total += degree[j] + 1.0;
        double r = rng.uniform() * total;
        std::size_t pick = i - 1;
        for (std::size_t j = 0; j < i; ++j) {
          if (chosen.contains(j)) continue;
          r -= degree[j] + 1.0;
          if (r < 0.0) {
            pick = j;
            break;
          }
        }
        chosen.insert(pick);
      }
      for (std::size_t j : chosen) {
        if (try_edge(m[i], m[j], pw)) {
          degree[i] += 1.0;
          degree[j] += 1.0;
        }
      }
    }
  }
  // Sparse cross-pathway edges: a ring keeps the network connected, plus one
  // random extra per pathway.
  if (p.n_pathways > 1) {
    std::size_t attempts = 0;
    for (std::size_t pw = 0; pw < p.n_pathways; ++pw) {
      const auto& a = members[pw];
      const auto& b = members[(pw + 1) % p.n_pathways];
      while (!try_edge(a[rng.below(a.size())], b[rng.below(b.size())], pw)) {
        if (++attempts > 1000) throw DataError("gen: could not place cross-pathway edges");
      }
    }
    for (std::size_t pw = 0; pw < p.n_pathways; ++pw) {
      const std::size_t other = rng.below(p.n_pathways);
      if (other == pw) continue;
      try_edge(members[pw][rng.below(members[pw].size())], members[other][rng.below(members[other].size())], pw);
    }
  }
  if (!detail::connected(g)) throw DataError("gen: network is disconnected; increase genes per pathway");

  // Drugs with 1-3 targets each.
  const std::size_t dw = detail::digits(p.n_drugs);
  for (std::size_t d = 0; d < p.n_drugs; ++d) {
    w.catalog.ids.push_back(detail::padded("D", d + 1, dw));
    w.catalog.names.push_back(detail::padded("drug", d + 1, dw));
    const std::size_t nt = 1 + rng.below(std::min<std::size_t>(3, p.n_genes));
    std::set<std::string> targets;
    while (targets.size() < nt) targets.insert(g.gene_id(rng.below(p.n_genes)));
    w.catalog.targets.emplace_back(targets.begin(), targets.end());
  }

  // Planted mechanism per cell line.
  const std::size_t cw = detail::digits(p.n_cells);
  const std::size_t n_planted = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(p.planted_fraction * static_cast<double>(g.edges().size()))));
  std::vector<std::size_t> edge_order(g.edges().size());
  CellLineProfiles& prof = w.profiles;
  prof.gene_ids = g.gene_ids();
  for (GeneIndex i = 0; i < g.gene_count(); ++i) prof.gene_index.emplace(prof.gene_ids[i], i);
  for (std::size_t c = 0; c < p.n_cells; ++c) {
    const std::string cell = detail::padded("CL", c + 1, cw);
    prof.cell_index.emplace(cell, c);
    prof.cell_lines.push_back(cell);
    for (std::size_t e = 0; e < edge_order.size(); ++e) edge_order[e] = e;
    rng.shuffle(edge_order);
    auto& planted = w.planted[cell];
    planted.insert(edge_order.begin(), edge_order.begin() + static_cast<std::ptrdiff_t>(n_planted));
    Tensor values(g.gene_count(), 2);
    std::vector<bool> marked(g.gene_count(), false);
    for (std::size_t e : planted) {
      marked[g.edges()[e].src] = true;
      marked[g.edges()[e].dst] = true;
    }
    for (GeneIndex i = 0; i < g.gene_count(); ++i) {
      values(i, 0) = rng.normal();
      values(i, 1) = (marked[i] ? 1.0 : 0.0) + rng.normal(0.0, p.marker_sd);
    }
    prof.values.push_back(std::move(values));
  }

  // Distinct (pair, cell line) combinations, seeded draw without replacement.
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> combos;
  for (std::size_t a = 0; a < p.n_drugs; ++a)
    for (std::size_t b = a + 1; b < p.n_drugs; ++b)
      for (std::size_t c = 0; c < p.n_cells; ++c) combos.emplace_back(a, b, c);
  rng.shuffle(combos);
  combos.resize(p.n_samples);
  std::sort(combos.begin(), combos.end());
  Rng noise(derive_seed(p.seed, 0x9015e));
  for (const auto& [a, b, c] : combos) {
    SynergySample s{w.catalog.ids[a], w.catalog.ids[b], prof.cell_lines[c], 0.0};
    s.score = planted_score(g, w.catalog, prof, w.planted, s.drug_a, s.drug_b, s.cell_line);
    if (p.noise_sd > 0.0) s.score += noise.normal(0.0, p.noise_sd);
    w.samples.push_back(s);
  }
  return w;
}

/// Sample standard deviation of the noiseless scores, for relative noise.
inline double score_sd(const std::vector<SynergySample>& samples) {
  double mean = 0.0;
  for (const auto& s : samples) mean += s.score;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (const auto& s : samples) var += (s.score - mean) * (s.score - mean);
  return std::sqrt(var / static_cast<double>(samples.size()));
}

/// Writes the six data files plus planted_edges.csv.
inline void write_world(const PlantedWorld& w, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream os(dir / name, std::ios::trunc | std::ios::binary);
    if (!os) throw DataError("cannot write " + (dir / name).string());
    return os;
  };
  const SignalingGraph& g = w.graph;
  {
    auto os = open(DataFiles::genes);
    os << "gene_id,symbol,pathway\n";
    for (GeneIndex i = 0; i < g.gene_count(); ++i)
      for (std::size_t p : g.gene_pathways(i)) os << g.gene_id(i) << ',' << g.symbol(i) << ',' << g.pathway_id(p) << '\n';
  }
  {
    auto os = open(DataFiles::gene_edges);
    os << "src_gene,dst_gene,pathway\n";
    for (const auto& e : g.edges()) os << g.gene_id(e.src) << ',' << g.gene_id(e.dst) << ',' << g.pathway_id(e.pathway) << '\n';
  }
  {
    auto os = open(DataFiles::drugs);
    os << "drug_id,name\n";
    for (std::size_t d = 0; d < w.catalog.size(); ++d) os << w.catalog.ids[d] << ',' << w.catalog.names[d] << '\n';
  }
  {
    auto os = open(DataFiles::drug_targets);
    os << "drug_id,gene_id\n";
    for (std::size_t d = 0; d < w.catalog.size(); ++d)
      for (const auto& t : w.catalog.targets[d]) os << w.catalog.ids[d] << ',' << t << '\n';
  }
  {
    auto os = open(DataFiles::profiles);
    os << "cell_line,gene_id,expression,copy_number\n";
    for (std::size_t c = 0; c < w.profiles.cell_lines.size(); ++c)
      for (GeneIndex i = 0; i < g.gene_count(); ++i)
        os << w.profiles.cell_lines[c] << ',' << g.gene_id(i) << ',' << format_real(w.profiles.values[c](i, 0)) << ','
           << format_real(w.profiles.values[c](i, 1)) << '\n';
  }
  {
    auto os = open(DataFiles::synergy);
    os << "drug_a,drug_b,cell_line,score\n";
    for (const auto& s : w.samples) os << s.drug_a << ',' << s.drug_b << ',' << s.cell_line << ',' << format_real(s.score) << '\n';
  }
  {
    auto os = open("planted_edges.csv");
    os << "cell_line,src_gene,dst_gene\n";
    for (const auto& [cell, edges] : w.planted)
      for (std::size_t e : edges) os << cell << ',' << g.gene_id(g.edges()[e].src) << ',' << g.gene_id(g.edges()[e].dst) << '\n';
  }
}

/// cell line -> planted (src, dst) gene-id pairs, as written by write_world.
inline std::map<std::string, std::set<std::pair<std::string, std::string>>> load_planted_edges(
    const std::filesystem::path& file) {
  const auto t = csv::read(file, {"cell_line", "src_gene", "dst_gene"});
  std::map<std::string, std::set<std::pair<std::string, std::string>>> out;
  for (const auto& r : t.rows) out[r.fields[0]].insert({r.fields[1], r.fields[2]});
  return out;
}

inline std::map<std::string, std::set<std::pair<std::string, std::string>>> planted_pairs(const PlantedWorld& w) {
  std::map<std::string, std::set<std::pair<std::string, std::string>>> out;
  for (const auto& [cell, edges] : w.planted)
    for (std::size_t e : edges)
      out[cell].insert({w.graph.gene_id(w.graph.edges()[e].src), w.graph.gene_id(w.graph.edges()[e].dst)});
  return out;
}

// ---- small random fixtures ----------------------------------------------------

struct Fixture {
  SignalingGraph graph;
  DrugCatalog catalog;
  CellLineProfiles profiles;
  SynergySample sample;
};

/// A connected random network of `n_genes` genes in one pathway (a random
/// spanning tree plus about n/2 extra edges), two drugs with 1-2 targets
/// each, one cell line with N(0,1) profiles and an N(0,1) score.
inline Fixture random_fixture(std::uint64_t seed, std::size_t n_genes = 6) {
  if (n_genes < 2) throw UsageError("fixture: at least 2 genes");
  Rng rng(seed);
  Fixture f;
  const std::size_t gw = detail::digits(n_genes);
  f.graph.add_pathway("P1");
  for (std::size_t i = 0; i < n_genes; ++i) {
    const GeneIndex g = f.graph.add_gene(detail::padded("G", i + 1, gw), detail::padded("SYM", i + 1, gw));
    f.graph.add_membership(g, 0);
  }
  std::set<std::pair<GeneIndex, GeneIndex>> used;
  auto link = [&](GeneIndex a, GeneIndex b) {
    if (a == b || !used.insert(std::minmax(a, b)).second) return;
    if (rng.uniform() < 0.5) std::swap(a, b);
    f.graph.add_edge(a, b, 0);
  };
  for (GeneIndex i = 1; i < n_genes; ++i) link(i, rng.below(i));
  for (std::size_t k = 0; k < n_genes / 2; ++k) link(rng.below(n_genes), rng.below(n_genes));
  for (std::size_t d = 0; d < 2; ++d) {
    f.catalog.ids.push_back("D" + std::to_string(d + 1));
    f.catalog.names.push_back("drug" + std::to_string(d + 1));
    std::set<std::string> t;
    const std::size_t nt = 1 + rng.below(2);
    while (t.size() < nt) t.insert(f.graph.gene_id(rng.below(n_genes)));
    f.catalog.targets.emplace_back(t.begin(), t.end());
  }
  f.profiles.cell_lines = {"CL1"};
  f.profiles.cell_index.emplace("CL1", 0);
  f.profiles.gene_ids = f.graph.gene_ids();
  for (GeneIndex i = 0; i < n_genes; ++i) f.profiles.gene_index.emplace(f.profiles.gene_ids[i], i);
  Tensor values(n_genes, 2);
  for (std::size_t k = 0; k < values.size(); ++k) values[k] = rng.normal();
  f.profiles.values.push_back(std::move(values));
  f.sample = {"D1", "D2", "CL1", rng.normal()};
  return f;
}

/// Every parameter entry drawn from N(0, sd^2), so no bias starts exactly at
/// a relu kink.
inline ParamStore random_params(const ModelConfig& cfg, std::size_t n_drugs, std::uint64_t seed, double sd = 0.5) {
  ParamStore p = init_params(cfg, n_drugs);
  Rng rng(seed);
  for (auto& [name, t] : p)
    for (std::size_t k = 0; k < t.size(); ++k) t[k] = rng.normal(0.0, sd);
  return p;
}

/// Finite-difference check of the per-sample loss gradient on one random
/// fixture: 6 genes, 2 drugs, d_hidden 8, random parameters.
inline GradCheckReport fixture_grad_check(std::uint64_t seed, double tol = 1e-4) {
  const Fixture f = random_fixture(seed);
  ModelConfig cfg;
  cfg.d_hidden = 8;
  cfg.seed = seed;
  const IdspModel model(cfg, f.catalog.ids, random_params(cfg, f.catalog.size(), derive_seed(seed, 1)));
  const SampleGraph sg = build_sample_graph(f.graph, f.catalog, f.profiles, f.sample, {cfg.layers, true, true});
  const auto rows = model.drug_rows(sg);
  return grad_check([&](Tape& t) { return sample_loss(t, sg, cfg, rows); }, model.params(), 1e-6, tol);
}

/// Training settings written next to a generated world.
inline nlohmann::json synthetic_train_config(const SynthParams& p) {
  return {{"data_dir", "."}, {"seed", p.seed}, {"zscore", false}, {"layers", 2}, {"lr", 3e-4},
          {"batch_size", 16},  {"epochs", 300},  {"early_stop_patience", 50}};
}

// ---- evaluation helpers -------------------------------------------------------

/// Area under the ROC curve with midranks for ties.
inline double auroc(const std::vector<double>& scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (bool l : labels) pos += l ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw DataError("auroc: need at least one positive and one negative item");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

/// AUROC of mean learned weight per (cell line, undirected gene pair) against
/// planted membership. Both directions of an edge and every sample of the
/// cell line in which it appears contribute to the mean.
inline double recovery_auroc(const std::vector<EdgeWeightMap>& maps, const std::vector<std::string>& cells,
                             const std::map<std::string, std::set<std::pair<std::string, std::string>>>& planted) {
  if (maps.size() != cells.size()) throw ShapeError("recovery_auroc: one cell line per map required");
  std::map<std::tuple<std::string, std::string, std::string>, std::pair<double, std::size_t>> acc;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    for (const auto& e : maps[m].entries) {
      if (e.relation != Relation::GeneGene) continue;
      auto [lo, hi] = std::minmax(e.src, e.dst);
      auto& slot = acc[{cells[m], lo, hi}];
      slot.first += e.weight;
      slot.second += 1;
    }
  }
  std::vector<double> scores;
  std::vector<bool> labels;
  for (const auto& [key, sum] : acc) {
    const auto& [cell, a, b] = key;
    bool is_planted = false;
    if (auto it = planted.find(cell); it != planted.end())
      is_planted = it->second.contains({a, b}) || it->second.contains({b, a});
    scores.push_back(sum.first / static_cast<double>(sum.second));
    labels.push_back(is_planted);
  }
  return auroc(scores, labels);
}

}  // namespace idsp
