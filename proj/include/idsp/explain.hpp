#pragma once

// Edge-importance extraction, salient subgraphs, cross-cell-line comparison
// and the single-gene Welch screens.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsp/error.hpp"
#include "idsp/graphdata.hpp"
#include "idsp/model.hpp"
#include "idsp/stats.hpp"

namespace idsp {

/// Layer-0 weights of `model` on one sample graph.
inline EdgeWeightMap extract_importance(const IdspModel& model, const SampleGraph& sg) {
  return model.trace(sg).weights;
}

struct SalientEdge {
  std::string src;
  std::string dst;
  Relation relation = Relation::GeneGene;
  double v = 0.0;
  friend bool operator==(const SalientEdge&, const SalientEdge&) = default;
};

struct SalientSubgraph {
  std::string sample;
  double tau = 0.5;
  std::vector<SalientEdge> edges;
  std::map<std::string, std::size_t> centrality;  // degree (in + out) within `edges`
  std::set<std::string> drugs;                    // node labels that are drug nodes
  friend bool operator==(const SalientSubgraph&, const SalientSubgraph&) = default;
};

/// Keeps edges with v > tau and counts degrees on what is kept.
inline SalientSubgraph salient(const EdgeWeightMap& importance, double tau = 0.5) {
  if (!(tau >= 0.0 && tau < 1.0)) throw UsageError("salient: tau must lie in [0, 1)");
  SalientSubgraph out;
  out.sample = importance.sample;
  out.tau = tau;
  for (const auto& e : importance.entries) {
    if (!(e.weight > tau)) continue;
    out.edges.push_back({e.src, e.dst, e.relation, e.weight});
    ++out.centrality[e.src];
    ++out.centrality[e.dst];
  }
  return out;
}

/// Same as above, marking the sample's drug nodes for export.
inline SalientSubgraph salient(const EdgeWeightMap& importance, const SampleGraph& sg, double tau = 0.5) {
  SalientSubgraph out = salient(importance, tau);
  out.drugs = {sg.drug_a, sg.drug_b};
  return out;
}

inline std::string format_importance(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline void write_dot(std::ostream& os, const SalientSubgraph& s) {
  auto quote = [](const std::string& x) {
    std::string q = "\"";
    for (char c : x) {
      if (c == '"' || c == '\\') q.push_back('\\');
      q.push_back(c);
    }
    return q + "\"";
  };
  os << "digraph " << quote(s.sample) << " {\n";
  std::set<std::string> nodes;
  for (const auto& e : s.edges) {
    nodes.insert(e.src);
    nodes.insert(e.dst);
  }
  for (const auto& n : nodes) {
    os << "  " << quote(n) << (s.drugs.contains(n) ? " [shape=circle,color=red];\n" : " [color=green];\n");
  }
  for (const auto& e : s.edges) {
    os << "  " << quote(e.src) << " -> " << quote(e.dst) << " [label=\"" << format_importance(e.v) << "\"];\n";
  }
  os << "}\n";
}

inline nlohmann::json to_json(const SalientSubgraph& s) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : s.edges)
    edges.push_back({{"src", e.src}, {"dst", e.dst}, {"relation", relation_name(e.relation)}, {"v", e.v}});
  nlohmann::json centrality = nlohmann::json::object();
  for (const auto& [node, degree] : s.centrality) centrality[node] = degree;
  return {{"sample", s.sample},
          {"tau", s.tau},
          {"edges", edges},
          {"centrality", centrality},
          {"drugs", std::vector<std::string>(s.drugs.begin(), s.drugs.end())}};
}

inline SalientSubgraph salient_from_json(const nlohmann::json& j) {
  try {
    SalientSubgraph s;
    s.sample = j.at("sample").get<std::string>();
    s.tau = j.at("tau").get<double>();
    for (const auto& e : j.at("edges")) {
      s.edges.push_back({e.at("src").get<std::string>(), e.at("dst").get<std::string>(),
                         parse_relation(e.at("relation").get<std::string>()), e.at("v").get<double>()});
    }
    for (const auto& [node, degree] : j.at("centrality").items()) s.centrality[node] = degree.get<std::size_t>();
    if (j.contains("drugs"))
      for (const auto& d : j.at("drugs")) s.drugs.insert(d.get<std::string>());
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("salient subgraph JSON: ") + e.what());
  }
}

// ---- cross-cell-line comparison ----------------------------------------------

struct GeneScore {
  std::string gene;
  std::size_t centrality = 0;
  friend bool operator==(const GeneScore&, const GeneScore&) = default;
};

struct CellLineComparison {
  std::vector<GeneScore> top_a, top_b;    // highest total centrality first, ties by gene id
  std::vector<std::string> intersection;  // of the two top-k gene sets
  std::vector<std::string> only_a, only_b;
};

/// Genes of the union of salient subgraphs ranked by summed centrality. Drug
/// nodes are left out.
inline std::vector<GeneScore> rank_genes(const std::vector<SalientSubgraph>& subgraphs) {
  std::map<std::string, std::size_t> total;
  for (const auto& s : subgraphs)
    for (const auto& [node, degree] : s.centrality)
      if (!s.drugs.contains(node)) total[node] += degree;
  std::vector<GeneScore> out;
  for (const auto& [gene, c] : total) out.push_back({gene, c});
  std::stable_sort(out.begin(), out.end(),
                   [](const GeneScore& a, const GeneScore& b) { return a.centrality > b.centrality; });
  return out;
}

inline CellLineComparison compare_cell_lines(const std::vector<SalientSubgraph>& cell_a,
                                             const std::vector<SalientSubgraph>& cell_b, std::size_t top_k) {
  if (cell_a.empty() || cell_b.empty()) throw DataError("compare: each cell line needs at least one sample");
  CellLineComparison out;
  out.top_a = rank_genes(cell_a);
  out.top_b = rank_genes(cell_b);
  if (out.top_a.size() > top_k) out.top_a.resize(top_k);
  if (out.top_b.size() > top_k) out.top_b.resize(top_k);
  std::set<std::string> a, b;
  for (const auto& g : out.top_a) a.insert(g.gene);
  for (const auto& g : out.top_b) b.insert(g.gene);
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out.intersection));
  std::set_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out.only_a));
  std::set_difference(b.begin(), b.end(), a.begin(), a.end(), std::back_inserter(out.only_b));
  return out;
}

inline nlohmann::json to_json(const CellLineComparison& c) {
  auto scores = [](const std::vector<GeneScore>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& g : v) a.push_back({{"gene", g.gene}, {"centrality", g.centrality}});
    return a;
  };
  return {{"top_a", scores(c.top_a)},
          {"top_b", scores(c.top_b)},
          {"intersection", c.intersection},
          {"only_a", c.only_a},
          {"only_b", c.only_b}};
}

// ---- single-gene screens -------------------------------------------------------

struct TTestResult {
  std::string gene;
  std::size_t n_with = 0;
  std::size_t n_without = 0;
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool significant = false;  // p < alpha
};

struct SkippedGene {
  std::string gene;
  std::size_t n_with = 0;
  std::size_t n_without = 0;
  std::string reason;
};

struct ScreenReport {
  double alpha = 0.05;
  std::vector<TTestResult> results;  // ascending gene id
  std::vector<SkippedGene> skipped;

  std::size_t count_p_below_alpha() const {
    return static_cast<std::size_t>(
        std::count_if(results.begin(), results.end(), [](const TTestResult& r) { return r.significant; }));
  }
  /// Count under the alternative reading |t| > alpha.
  std::size_t count_abs_t_above_alpha() const {
    return static_cast<std::size_t>(std::count_if(results.begin(), results.end(), [this](const TTestResult& r) {
      return std::abs(r.t) > alpha;
    }));
  }
};

/// Splits sample scores by `member(sample, gene)` and runs welch_t per gene.
template <typename Member>
ScreenReport screen_genes(const std::vector<SynergySample>& samples, const std::vector<std::string>& genes,
                          double alpha, Member&& member) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("screen: alpha must lie in (0, 1)");
  ScreenReport out;
  out.alpha = alpha;
  std::vector<std::string> sorted = genes;
  std::sort(sorted.begin(), sorted.end());
  for (const auto& g : sorted) {
    std::vector<double> with, without;
    for (std::size_t i = 0; i < samples.size(); ++i) (member(i, g) ? with : without).push_back(samples[i].score);
    if (with.size() < 2 || without.size() < 2) {
      out.skipped.push_back({g, with.size(), without.size(), "fewer than 2 samples on one side"});
      continue;
    }
    try {
      const WelchResult w = welch_t(with, without);
      out.results.push_back({g, with.size(), without.size(), w.t, w.df, w.p, w.p < alpha});
    } catch (const DataError&) {
      out.skipped.push_back({g, with.size(), without.size(), "zero variance"});
    }
  }
  return out;
}

/// Genes targeted by at least one catalog drug that exist in `graph`.
/// A sample is "with" gene g when g targets either drug of the pair.
inline ScreenReport target_screen(const std::vector<SynergySample>& samples, const DrugCatalog& catalog,
                                  const SignalingGraph& graph, double alpha = 0.05) {
  std::set<std::string> universe;
  for (const auto& ts : catalog.targets)
    for (const auto& t : ts)
      if (graph.find_gene(t)) universe.insert(t);
  std::vector<std::set<std::string>> pair_targets;
  for (const auto& s : samples) {
    std::set<std::string> u(catalog.targets_of(s.drug_a).begin(), catalog.targets_of(s.drug_a).end());
    u.insert(catalog.targets_of(s.drug_b).begin(), catalog.targets_of(s.drug_b).end());
    pair_targets.push_back(std::move(u));
  }
  return screen_genes(samples, {universe.begin(), universe.end()}, alpha,
                      [&](std::size_t i, const std::string& g) { return pair_targets[i].contains(g); });
}

/// Non-target genes within 2 hops of some pair's targets. A sample is "with"
/// gene g when g lies within 2 hops of that pair's targets.
inline ScreenReport twohop_screen(const std::vector<SynergySample>& samples, const DrugCatalog& catalog,
                                  const SignalingGraph& graph, double alpha = 0.05) {
  std::set<GeneIndex> targeted;
  for (const auto& ts : catalog.targets)
    for (const auto& t : ts)
      if (auto g = graph.find_gene(t)) targeted.insert(*g);
  std::map<std::pair<std::string, std::string>, std::set<std::string>> cache;
  std::vector<const std::set<std::string>*> near(samples.size());
  std::set<std::string> universe;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto key = std::make_pair(samples[i].drug_a, samples[i].drug_b);
    auto it = cache.find(key);
    if (it == cache.end()) {
      std::set<std::string> ids;
      // targets sit at distance 1, so k = 3 reaches two gene-gene hops beyond them
      for (GeneIndex g : khop_nodes(graph, catalog, key.first, key.second, 3))
        if (!targeted.contains(g)) ids.insert(graph.gene_id(g));
      it = cache.emplace(key, std::move(ids)).first;
    }
    near[i] = &it->second;
    universe.insert(it->second.begin(), it->second.end());
  }
  return screen_genes(samples, {universe.begin(), universe.end()}, alpha,
                      [&](std::size_t i, const std::string& g) { return near[i]->contains(g); });
}

inline void write_screen_csv(std::ostream& os, const ScreenReport& r) {
  auto real = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  os << "gene,n_with,n_without,t,df,p,significant\n";
  for (const auto& x : r.results) {
    os << x.gene << ',' << x.n_with << ',' << x.n_without << ',' << real(x.t) << ',' << real(x.df) << ','
       << real(x.p) << ',' << (x.significant ? "true" : "false") << '\n';
  }
}

}  // namespace idsp
