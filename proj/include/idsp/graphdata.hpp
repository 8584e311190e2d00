#pragma once

// Signaling network, drug catalog, cell-line profiles and synergy samples,
// plus construction of the per-sample graph the model consumes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "idsp/csv.hpp"
#include "idsp/error.hpp"
#include "idsp/tensor.hpp"

namespace idsp {

using GeneIndex = std::size_t;

/// Counts and warnings gathered while loading. Shared across loaders.
struct IngestReport {
  std::size_t genes = 0;
  std::size_t edges = 0;
  std::size_t pathways = 0;
  std::size_t isolated_genes = 0;
  std::size_t dropped_drugs = 0;
  std::size_t dropped_targets = 0;
  std::size_t imputed_profiles = 0;
  std::size_t duplicate_samples = 0;
  std::vector<std::string> warnings;
};

class SignalingGraph {
 public:
  struct Edge {
    GeneIndex src = 0;
    GeneIndex dst = 0;
    std::size_t pathway = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
  };

  /// Adds a gene or returns the existing index. A second declaration with a
  /// different symbol is an error.
  GeneIndex add_gene(const std::string& id, const std::string& symbol) {
    if (auto it = gene_index_.find(id); it != gene_index_.end()) {
      if (symbols_[it->second] != symbol)
        throw DataError("duplicate gene id '" + id + "' with conflicting symbols '" +
                        symbols_[it->second] + "' and '" + symbol + "'");
      return it->second;
    }
    const GeneIndex g = gene_ids_.size();
    gene_ids_.push_back(id);
    symbols_.push_back(symbol);
    gene_pathways_.emplace_back();
    adjacency_.emplace_back();
    gene_index_.emplace(id, g);
    return g;
  }

  std::size_t add_pathway(const std::string& id) {
    if (auto it = pathway_index_.find(id); it != pathway_index_.end()) return it->second;
    const std::size_t p = pathway_ids_.size();
    pathway_ids_.push_back(id);
    pathway_members_.emplace_back();
    pathway_index_.emplace(id, p);
    return p;
  }

  /// Returns false when the membership already exists.
  bool add_membership(GeneIndex g, std::size_t pathway) {
    auto& members = pathway_members_.at(pathway);
    auto pos = std::lower_bound(members.begin(), members.end(), g);
    if (pos != members.end() && *pos == g) return false;
    members.insert(pos, g);
    auto& gp = gene_pathways_.at(g);
    gp.insert(std::lower_bound(gp.begin(), gp.end(), pathway), pathway);
    return true;
  }

  void add_edge(GeneIndex src, GeneIndex dst, std::size_t pathway) {
    if (src >= gene_count() || dst >= gene_count()) throw DataError("edge endpoint out of range");
    if (src == dst) throw DataError("self-loop on gene '" + gene_ids_[src] + "'");
    const Edge e{src, dst, pathway};
    if (!edge_set_.insert({src, dst, pathway}).second) {
      throw DataError("duplicate edge " + gene_ids_[src] + " -> " + gene_ids_[dst] +
                      " in pathway '" + pathway_ids_.at(pathway) + "'");
    }
    edges_.push_back(e);
    insert_sorted(adjacency_[src], dst);
    insert_sorted(adjacency_[dst], src);
  }

  std::size_t gene_count() const { return gene_ids_.size(); }
  std::size_t pathway_count() const { return pathway_ids_.size(); }
  const std::string& gene_id(GeneIndex g) const { return gene_ids_.at(g); }
  const std::string& symbol(GeneIndex g) const { return symbols_.at(g); }
  const std::vector<std::string>& gene_ids() const { return gene_ids_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::string& pathway_id(std::size_t p) const { return pathway_ids_.at(p); }
  const std::vector<GeneIndex>& pathway_members(std::size_t p) const { return pathway_members_.at(p); }
  const std::vector<std::size_t>& gene_pathways(GeneIndex g) const { return gene_pathways_.at(g); }

  /// Neighbors ignoring direction, sorted, each listed once.
  const std::vector<GeneIndex>& neighbors(GeneIndex g) const { return adjacency_.at(g); }

  std::optional<GeneIndex> find_gene(std::string_view id) const {
    auto it = gene_index_.find(std::string(id));
    if (it == gene_index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<std::size_t> find_pathway(std::string_view id) const {
    auto it = pathway_index_.find(std::string(id));
    if (it == pathway_index_.end()) return std::nullopt;
    return it->second;
  }

  /// Copy with the given genes and every incident edge removed. Gene and
  /// pathway order is otherwise preserved; pathways left empty are dropped.
  SignalingGraph without_genes(const std::set<std::string>& removed) const {
    SignalingGraph out;
    for (std::size_t p = 0; p < pathway_count(); ++p) {
      bool any = false;
      for (GeneIndex g : pathway_members_[p]) any = any || !removed.contains(gene_ids_[g]);
      if (any) out.add_pathway(pathway_ids_[p]);
    }
    for (GeneIndex g = 0; g < gene_count(); ++g) {
      if (removed.contains(gene_ids_[g])) continue;
      const GeneIndex ng = out.add_gene(gene_ids_[g], symbols_[g]);
      for (std::size_t p : gene_pathways_[g]) out.add_membership(ng, *out.find_pathway(pathway_ids_[p]));
    }
    for (const Edge& e : edges_) {
      auto s = out.find_gene(gene_ids_[e.src]);
      auto d = out.find_gene(gene_ids_[e.dst]);
      if (s && d) out.add_edge(*s, *d, *out.find_pathway(pathway_ids_[e.pathway]));
    }
    return out;
  }

  friend bool operator==(const SignalingGraph& a, const SignalingGraph& b) {
    return a.gene_ids_ == b.gene_ids_ && a.symbols_ == b.symbols_ && a.edges_ == b.edges_ &&
           a.pathway_ids_ == b.pathway_ids_ && a.pathway_members_ == b.pathway_members_ &&
           a.adjacency_ == b.adjacency_;
  }

 private:
  static void insert_sorted(std::vector<GeneIndex>& v, GeneIndex x) {
    auto pos = std::lower_bound(v.begin(), v.end(), x);
    if (pos == v.end() || *pos != x) v.insert(pos, x);
  }

  std::vector<std::string> gene_ids_;
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, GeneIndex> gene_index_;
  std::vector<std::vector<std::size_t>> gene_pathways_;
  std::vector<std::vector<GeneIndex>> adjacency_;
  std::vector<Edge> edges_;
  std::set<std::tuple<GeneIndex, GeneIndex, std::size_t>> edge_set_;
  std::vector<std::string> pathway_ids_;
  std::vector<std::vector<GeneIndex>> pathway_members_;
  std::unordered_map<std::string, std::size_t> pathway_index_;
};

/// Drugs with their documented targets. Targets are gene ids, sorted.
struct DrugCatalog {
  std::vector<std::string> ids;
  std::vector<std::string> names;
  std::vector<std::vector<std::string>> targets;

  std::size_t size() const { return ids.size(); }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = std::find(ids.begin(), ids.end(), id);
    if (it == ids.end()) return std::nullopt;
    return static_cast<std::size_t>(it - ids.begin());
  }

  std::size_t index(std::string_view id) const {
    auto i = find(id);
    if (!i) throw DataError("unknown drug '" + std::string(id) + "'");
    return *i;
  }

  const std::vector<std::string>& targets_of(std::string_view id) const { return targets[index(id)]; }

  friend bool operator==(const DrugCatalog&, const DrugCatalog&) = default;
};

/// Per (cell line, gene) measurements. Column 0 is expression, column 1 copy
/// number, further columns are extra profile features in file order.
struct CellLineProfiles {
  std::vector<std::string> cell_lines;
  std::vector<std::string> gene_ids;
  std::vector<std::string> feature_names{"expression", "copy_number"};
  std::vector<Tensor> values;  // one gene_ids.size() x feature_names.size() tensor per cell line
  std::unordered_map<std::string, std::size_t> cell_index;
  std::unordered_map<std::string, std::size_t> gene_index;

  std::size_t feature_count() const { return feature_names.size(); }

  std::optional<std::size_t> find_cell(std::string_view id) const {
    auto it = cell_index.find(std::string(id));
    if (it == cell_index.end()) return std::nullopt;
    return it->second;
  }

  std::span<const double> get(std::size_t cell, std::string_view gene) const {
    auto it = gene_index.find(std::string(gene));
    if (it == gene_index.end()) throw DataError("no profile for gene '" + std::string(gene) + "'");
    return values.at(cell).row(it->second);
  }

  friend bool operator==(const CellLineProfiles& a, const CellLineProfiles& b) {
    return a.cell_lines == b.cell_lines && a.gene_ids == b.gene_ids &&
           a.feature_names == b.feature_names && a.values == b.values;
  }
};

struct SynergySample {
  std::string drug_a;
  std::string drug_b;
  std::string cell_line;
  double score = 0.0;

  std::string key() const { return drug_a + "|" + drug_b + "|" + cell_line; }
  friend bool operator==(const SynergySample&, const SynergySample&) = default;
};

// ---- ingestion -----------------------------------------------------------

inline SignalingGraph load_network(const std::filesystem::path& gene_file,
                                   const std::filesystem::path& edge_file,
                                   IngestReport* report = nullptr) {
  SignalingGraph g;
  const auto genes = csv::read(gene_file, {"gene_id", "symbol", "pathway"});
  for (const auto& r : genes.rows) {
    try {
      const GeneIndex gi = g.add_gene(r.fields[0], r.fields[1]);
      if (!g.add_membership(gi, g.add_pathway(r.fields[2]))) {
        throw DataError("duplicate gene id '" + r.fields[0] + "' in pathway '" + r.fields[2] + "'");
      }
    } catch (const DataError& e) {
      throw DataError(genes.source + ":" + std::to_string(r.line) + ": " + e.what());
    }
  }
  const auto edges = csv::read(edge_file, {"src_gene", "dst_gene", "pathway"});
  for (const auto& r : edges.rows) {
    const std::string where = edges.source + ":" + std::to_string(r.line) + ": ";
    auto s = g.find_gene(r.fields[0]);
    if (!s) throw DataError(where + "edge references undeclared gene '" + r.fields[0] + "'");
    auto d = g.find_gene(r.fields[1]);
    if (!d) throw DataError(where + "edge references undeclared gene '" + r.fields[1] + "'");
    auto p = g.find_pathway(r.fields[2]);
    if (!p) throw DataError(where + "edge references undeclared pathway '" + r.fields[2] + "'");
    try {
      g.add_edge(*s, *d, *p);
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
  }
  if (report) {
    report->genes = g.gene_count();
    report->edges = g.edges().size();
    report->pathways = g.pathway_count();
    for (GeneIndex i = 0; i < g.gene_count(); ++i)
      if (g.neighbors(i).empty()) ++report->isolated_genes;
    if (report->isolated_genes > 0)
      report->warnings.push_back(std::to_string(report->isolated_genes) + " isolated genes");
  }
  return g;
}

/// Drugs whose targets all fall outside the graph are dropped and counted.
inline DrugCatalog load_drugs(const std::filesystem::path& drug_file,
                              const std::filesystem::path& target_file, const SignalingGraph& graph,
                              IngestReport* report = nullptr) {
  const auto drugs = csv::read(drug_file, {"drug_id", "name"});
  std::vector<std::string> ids, names;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : drugs.rows) {
    if (index.contains(r.fields[0]))
      throw DataError(drugs.source + ":" + std::to_string(r.line) + ": duplicate drug id '" +
                      r.fields[0] + "'");
    index.emplace(r.fields[0], ids.size());
    ids.push_back(r.fields[0]);
    names.push_back(r.fields[1]);
  }
  std::vector<std::set<std::string>> targets(ids.size());
  std::size_t dropped_targets = 0;
  const auto tt = csv::read(target_file, {"drug_id", "gene_id"});
  for (const auto& r : tt.rows) {
    auto it = index.find(r.fields[0]);
    if (it == index.end())
      throw DataError(tt.source + ":" + std::to_string(r.line) + ": unknown drug '" + r.fields[0] + "'");
    if (!graph.find_gene(r.fields[1])) {
      ++dropped_targets;
      continue;
    }
    targets[it->second].insert(r.fields[1]);
  }
  DrugCatalog cat;
  std::size_t dropped = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (targets[i].empty()) {
      ++dropped;
      continue;
    }
    cat.ids.push_back(ids[i]);
    cat.names.push_back(names[i]);
    cat.targets.emplace_back(targets[i].begin(), targets[i].end());
  }
  if (cat.size() == 0) throw DataError("drug catalog is empty after dropping drugs without targets in the network");
  if (report) {
    report->dropped_drugs = dropped;
    report->dropped_targets = dropped_targets;
    if (dropped > 0) report->warnings.push_back(std::to_string(dropped) + " drugs without targets in the network dropped");
    if (dropped_targets > 0)
      report->warnings.push_back(std::to_string(dropped_targets) + " drug targets outside the network ignored");
  }
  return cat;
}

/// Every cell line must cover every gene unless `impute_missing` is set, in
/// which case gaps become 0.0 and are counted.
inline CellLineProfiles load_profiles(const std::filesystem::path& profile_file,
                                      const SignalingGraph& graph, bool impute_missing = false,
                                      IngestReport* report = nullptr) {
  const auto t = csv::read(profile_file, {"cell_line", "gene_id", "expression", "copy_number"}, true);
  CellLineProfiles p;
  p.gene_ids = graph.gene_ids();
  for (GeneIndex g = 0; g < graph.gene_count(); ++g) p.gene_index.emplace(p.gene_ids[g], g);
  for (std::size_t c = 4; c < t.header.size(); ++c) p.feature_names.push_back(t.header[c]);
  const std::size_t nf = p.feature_count();
  std::vector<std::vector<bool>> seen;
  for (const auto& r : t.rows) {
    const std::string where = t.source + ":" + std::to_string(r.line) + ": ";
    auto g = p.gene_index.find(r.fields[1]);
    if (g == p.gene_index.end()) throw DataError(where + "unknown gene '" + r.fields[1] + "'");
    auto [it, fresh] = p.cell_index.emplace(r.fields[0], p.cell_lines.size());
    if (fresh) {
      p.cell_lines.push_back(r.fields[0]);
      p.values.emplace_back(p.gene_ids.size(), nf);
      seen.emplace_back(p.gene_ids.size(), false);
    }
    const std::size_t c = it->second;
    if (seen[c][g->second])
      throw DataError(where + "duplicate profile for (" + r.fields[0] + ", " + r.fields[1] + ")");
    seen[c][g->second] = true;
    for (std::size_t f = 0; f < nf; ++f) p.values[c](g->second, f) = csv::to_double(t, r, 2 + f);
  }
  if (p.cell_lines.empty()) throw DataError(t.source + ": no cell lines");
  std::size_t imputed = 0;
  for (std::size_t c = 0; c < p.cell_lines.size(); ++c) {
    for (GeneIndex g = 0; g < p.gene_ids.size(); ++g) {
      if (seen[c][g]) continue;
      if (!impute_missing)
        throw DataError(t.source + ": missing profile for (" + p.cell_lines[c] + ", " + p.gene_ids[g] + ")");
      ++imputed;
    }
  }
  if (report) {
    report->imputed_profiles = imputed;
    if (imputed > 0) report->warnings.push_back(std::to_string(imputed) + " missing profile entries imputed as 0");
  }
  return p;
}

/// Per gene and feature, centre and scale across cell lines (population sd).
/// Constant columns are only centred.
inline CellLineProfiles zscore_across_cells(CellLineProfiles p) {
  const std::size_t nc = p.cell_lines.size();
  for (GeneIndex g = 0; g < p.gene_ids.size(); ++g) {
    for (std::size_t f = 0; f < p.feature_count(); ++f) {
      double mean = 0.0;
      for (std::size_t c = 0; c < nc; ++c) mean += p.values[c](g, f);
      mean /= static_cast<double>(nc);
      double var = 0.0;
      for (std::size_t c = 0; c < nc; ++c) {
        const double d = p.values[c](g, f) - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / static_cast<double>(nc));
      for (std::size_t c = 0; c < nc; ++c) {
        double& v = p.values[c](g, f);
        v = sd > 1e-12 ? (v - mean) / sd : v - mean;
      }
    }
  }
  return p;
}

/// Canonicalizes drug order and averages duplicate (pair, cell line) rows in
/// first-appearance order.
inline std::vector<SynergySample> load_samples(const std::filesystem::path& sample_file,
                                               const DrugCatalog& catalog,
                                               const CellLineProfiles& profiles,
                                               IngestReport* report = nullptr) {
  const auto t = csv::read(sample_file, {"drug_a", "drug_b", "cell_line", "score"});
  std::vector<SynergySample> out;
  std::vector<std::size_t> counts;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : t.rows) {
    const std::string where = t.source + ":" + std::to_string(r.line) + ": ";
    for (int k = 0; k < 2; ++k)
      if (!catalog.find(r.fields[k])) throw DataError(where + "unknown drug '" + r.fields[k] + "'");
    if (!profiles.find_cell(r.fields[2])) throw DataError(where + "unknown cell line '" + r.fields[2] + "'");
    if (r.fields[0] == r.fields[1]) throw DataError(where + "drug pair repeats '" + r.fields[0] + "'");
    SynergySample s{r.fields[0], r.fields[1], r.fields[2], csv::to_double(t, r, 3)};
    if (s.drug_b < s.drug_a) std::swap(s.drug_a, s.drug_b);
    auto [it, fresh] = index.emplace(s.key(), out.size());
    if (fresh) {
      out.push_back(s);
      counts.push_back(1);
    } else {
      out[it->second].score += s.score;
      ++counts[it->second];
    }
  }
  std::size_t dups = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (counts[i] > 1) {
      out[i].score /= static_cast<double>(counts[i]);
      dups += counts[i] - 1;
    }
  }
  if (report) {
    report->duplicate_samples = dups;
    if (dups > 0) report->warnings.push_back(std::to_string(dups) + " duplicate synergy rows averaged");
  }
  return out;
}

// ---- neighborhoods -------------------------------------------------------

/// Genes within k undirected hops of a drug whose targets are `targets`
/// (targets themselves sit at distance 1). Sorted ascending.
inline std::vector<GeneIndex> khop_from_targets(const SignalingGraph& graph,
                                                const std::vector<GeneIndex>& targets, std::size_t k) {
  if (k < 1) throw UsageError("khop: k must be >= 1");
  constexpr std::size_t unset = static_cast<std::size_t>(-1);
  std::vector<std::size_t> dist(graph.gene_count(), unset);
  std::deque<GeneIndex> queue;
  for (GeneIndex t : targets) {
    if (dist[t] == unset) {
      dist[t] = 1;
      queue.push_back(t);
    }
  }
  while (!queue.empty()) {
    const GeneIndex u = queue.front();
    queue.pop_front();
    if (dist[u] == k) continue;
    for (GeneIndex w : graph.neighbors(u)) {
      if (dist[w] != unset) continue;
      dist[w] = dist[u] + 1;
      queue.push_back(w);
    }
  }
  std::vector<GeneIndex> out;
  for (GeneIndex g = 0; g < graph.gene_count(); ++g)
    if (dist[g] != unset) out.push_back(g);
  return out;
}

/// Targets of a drug that exist in `graph`, as graph indices.
inline std::vector<GeneIndex> resolve_targets(const SignalingGraph& graph, const DrugCatalog& catalog,
                                              std::string_view drug) {
  std::vector<GeneIndex> out;
  for (const auto& id : catalog.targets_of(drug))
    if (auto g = graph.find_gene(id)) out.push_back(*g);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<GeneIndex> khop_nodes(const SignalingGraph& graph, const DrugCatalog& catalog,
                                         std::string_view drug_a, std::string_view drug_b, std::size_t k) {
  auto targets = resolve_targets(graph, catalog, drug_a);
  auto tb = resolve_targets(graph, catalog, drug_b);
  targets.insert(targets.end(), tb.begin(), tb.end());
  return khop_from_targets(graph, targets, k);
}

// ---- per-sample graph ------------------------------------------------------

enum class Relation : std::uint8_t { GeneGene = 0, DrugGene = 1 };
inline constexpr std::size_t kRelationCount = 2;

inline const char* relation_name(Relation r) { return r == Relation::GeneGene ? "gene-gene" : "drug-gene"; }

inline Relation parse_relation(std::string_view s) {
  if (s == "gene-gene") return Relation::GeneGene;
  if (s == "drug-gene") return Relation::DrugGene;
  throw DataError("unknown relation '" + std::string(s) + "'");
}

enum class NodeKind : std::uint8_t { DrugA, DrugB, Gene };

struct SampleEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  Relation relation = Relation::GeneGene;
  friend auto operator<=>(const SampleEdge& a, const SampleEdge& b) {
    if (a.relation != b.relation) return a.relation <=> b.relation;
    if (a.dst != b.dst) return a.dst <=> b.dst;
    return a.src <=> b.src;
  }
  friend bool operator==(const SampleEdge&, const SampleEdge&) = default;
};

/// Instance graph for one (drug pair, cell line).
///
/// Nodes 0 and 1 are drug A and drug B; gene nodes follow in ascending graph
/// order. Gene feature rows are [expression, copy_number, target_of_A,
/// target_of_B, extra profile columns...]; drug rows are zero here because
/// the model supplies drug features from its embedding table. Edges are
/// sorted by (relation, dst, src), so the in-neighbors of node j under
/// relation r form the contiguous range group(r, j) with ascending sources.
struct SampleGraph {
  std::string drug_a;
  std::string drug_b;
  std::string cell_line;
  double score = 0.0;

  std::vector<NodeKind> kinds;
  std::vector<std::string> labels;  // drug id for drug nodes, gene id for genes
  Tensor features;
  std::vector<SampleEdge> edges;
  std::vector<std::size_t> group_start;  // size kRelationCount * nodes + 1

  std::size_t node_count() const { return kinds.size(); }
  std::size_t feature_dim() const { return features.cols(); }
  std::size_t group_count() const { return kRelationCount * node_count(); }
  std::size_t group_of(const SampleEdge& e) const {
    return static_cast<std::size_t>(e.relation) * node_count() + e.dst;
  }

  /// Sources of edges into node j under relation r, ascending.
  std::vector<std::size_t> in_neighbors(std::size_t j, Relation r) const {
    const std::size_t g = static_cast<std::size_t>(r) * node_count() + j;
    std::vector<std::size_t> out;
    for (std::size_t k = group_start[g]; k < group_start[g + 1]; ++k) out.push_back(edges[k].src);
    return out;
  }

  std::string id() const { return drug_a + "+" + drug_b + "@" + cell_line; }

  /// Sorts edges and rebuilds the group index. Duplicate edges are removed.
  void finalize() {
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    group_start.assign(group_count() + 1, 0);
    for (const auto& e : edges) ++group_start[group_of(e) + 1];
    for (std::size_t g = 0; g < group_count(); ++g) group_start[g + 1] += group_start[g];
  }

  /// Same graph with gene nodes relabeled: new gene slot i holds old gene
  /// node order[i] (indices into the gene nodes, i.e. node - 2).
  SampleGraph with_gene_order(const std::vector<std::size_t>& order) const {
    const std::size_t ng = node_count() - 2;
    if (order.size() != ng) throw ShapeError("with_gene_order: permutation size mismatch");
    std::vector<std::size_t> new_of_old(node_count());
    new_of_old[0] = 0;
    new_of_old[1] = 1;
    SampleGraph out = *this;
    for (std::size_t i = 0; i < ng; ++i) {
      const std::size_t old = order[i] + 2;
      new_of_old[old] = i + 2;
      out.kinds[i + 2] = kinds[old];
      out.labels[i + 2] = labels[old];
      std::copy(features.row(old).begin(), features.row(old).end(), out.features.row(i + 2).begin());
    }
    for (auto& e : out.edges) {
      e.src = new_of_old[e.src];
      e.dst = new_of_old[e.dst];
    }
    out.finalize();
    return out;
  }
};

struct SampleGraphOptions {
  std::size_t layers = 3;      // L; pruning keeps genes within L hops
  bool prune = true;
  bool undirected_genes = true;  // add the reverse of every gene-gene row
};

inline SampleGraph build_sample_graph(const SignalingGraph& graph, const DrugCatalog& catalog,
                                      const CellLineProfiles& profiles, const SynergySample& sample,
                                      const SampleGraphOptions& opt = {}) {
  if (opt.layers < 1) throw UsageError("sample graph: L must be >= 1");
  const auto ta = resolve_targets(graph, catalog, sample.drug_a);
  const auto tb = resolve_targets(graph, catalog, sample.drug_b);
  if (ta.empty()) throw DataError("drug '" + sample.drug_a + "' has no targets in this network");
  if (tb.empty()) throw DataError("drug '" + sample.drug_b + "' has no targets in this network");
  auto cell = profiles.find_cell(sample.cell_line);
  if (!cell) throw DataError("unknown cell line '" + sample.cell_line + "'");

  std::vector<GeneIndex> genes;
  if (opt.prune) {
    auto all = ta;
    all.insert(all.end(), tb.begin(), tb.end());
    genes = khop_from_targets(graph, all, opt.layers);
  } else {
    genes.resize(graph.gene_count());
    for (GeneIndex g = 0; g < genes.size(); ++g) genes[g] = g;
  }
  constexpr std::size_t absent = static_cast<std::size_t>(-1);
  std::vector<std::size_t> node_of(graph.gene_count(), absent);
  for (std::size_t i = 0; i < genes.size(); ++i) node_of[genes[i]] = i + 2;

  SampleGraph sg;
  sg.drug_a = sample.drug_a;
  sg.drug_b = sample.drug_b;
  sg.cell_line = sample.cell_line;
  sg.score = sample.score;
  const std::size_t n = genes.size() + 2;
  const std::size_t d_in = 2 + profiles.feature_count();
  sg.kinds.assign(n, NodeKind::Gene);
  sg.kinds[0] = NodeKind::DrugA;
  sg.kinds[1] = NodeKind::DrugB;
  sg.labels.reserve(n);
  sg.labels.push_back(sample.drug_a);
  sg.labels.push_back(sample.drug_b);
  sg.features = Tensor(n, d_in);
  for (std::size_t i = 0; i < genes.size(); ++i) {
    const std::string& gid = graph.gene_id(genes[i]);
    sg.labels.push_back(gid);
    auto prof = profiles.get(*cell, gid);
    auto row = sg.features.row(i + 2);
    row[0] = prof[0];
    row[1] = prof[1];
    for (std::size_t f = 2; f < prof.size(); ++f) row[2 + f] = prof[f];
  }
  for (auto [slot, targets] : {std::pair{std::size_t{0}, &ta}, std::pair{std::size_t{1}, &tb}}) {
    for (GeneIndex t : *targets) {
      const std::size_t node = node_of[t];
      sg.features(node, 2 + slot) = 1.0;
      sg.edges.push_back({slot, node, Relation::DrugGene});
      sg.edges.push_back({node, slot, Relation::DrugGene});
    }
  }
  for (const auto& e : graph.edges()) {
    const std::size_t s = node_of[e.src];
    const std::size_t d = node_of[e.dst];
    if (s == absent || d == absent) continue;
    sg.edges.push_back({s, d, Relation::GeneGene});
    if (opt.undirected_genes) sg.edges.push_back({d, s, Relation::GeneGene});
  }
  sg.finalize();
  return sg;
}

// ---- bundle ------------------------------------------------------------------

/// File names inside a data directory.
struct DataFiles {
  static constexpr const char* genes = "genes.csv";
  static constexpr const char* gene_edges = "gene_edges.csv";
  static constexpr const char* drugs = "drugs.csv";
  static constexpr const char* drug_targets = "drug_targets.csv";
  static constexpr const char* profiles = "cell_profiles.csv";
  static constexpr const char* synergy = "synergy.csv";
};

struct DataBundle {
  SignalingGraph graph;
  DrugCatalog catalog;
  CellLineProfiles profiles;  // as loaded
  std::vector<SynergySample> samples;
  IngestReport report;
};

struct LoadOptions {
  bool impute_missing = false;
};

inline DataBundle load_bundle(const std::filesystem::path& dir, const LoadOptions& opt = {}) {
  DataBundle b;
  b.graph = load_network(dir / DataFiles::genes, dir / DataFiles::gene_edges, &b.report);
  b.catalog = load_drugs(dir / DataFiles::drugs, dir / DataFiles::drug_targets, b.graph, &b.report);
  b.profiles = load_profiles(dir / DataFiles::profiles, b.graph, opt.impute_missing, &b.report);
  b.samples = load_samples(dir / DataFiles::synergy, b.catalog, b.profiles, &b.report);
  return b;
}

}  // namespace idsp
