#pragma once

// IDSP forward computation.
//
//   edge scores   e_ij = relu(MLP([h_i | h_j])),  h = P1 x (drug) or P2 x (gene)
//   edge weights  v_ij = e_ij / max(max_{i' in N_r(j)} e_i'j, eps)
//   layer l       z_j' = relu([M0 z_j | sum_r mean_{i in N_r(j)} w_ij h_i]),
//                 h = M1 z (drug) or M2 z (gene), w = v at layer 0, 1 after
//   decoder       score = x_A^T D^T D x_B over the final drug rows
//
// Weights are stored out x in, so every linear map is matmul_nt(rows, W).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "idsp/autodiff.hpp"
#include "idsp/error.hpp"
#include "idsp/graphdata.hpp"
#include "idsp/random.hpp"
#include "idsp/tensor.hpp"

namespace idsp {

inline constexpr double kMaxGuard = 1e-12;

struct ModelConfig {
  std::size_t d_in = 4;
  std::size_t d_hidden = 32;  // must be even: each layer output is [self | aggregate]
  std::size_t layers = 3;
  std::size_t mlp_hidden = 16;
  std::size_t decoder_rank = 0;  // 0 means d_hidden
  bool learn_edge_weights = true;
  std::uint64_t seed = 0;

  std::size_t rank() const { return decoder_rank == 0 ? d_hidden : decoder_rank; }

  void validate() const {
    if (d_in < 4) throw UsageError("model: d_in must be >= 4");
    if (d_hidden == 0 || d_hidden % 2 != 0) throw UsageError("model: d_hidden must be even and positive");
    if (layers < 1) throw UsageError("model: layers must be >= 1");
    if (mlp_hidden < 1) throw UsageError("model: mlp_hidden must be >= 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"d_in", c.d_in},       {"d_hidden", c.d_hidden},         {"layers", c.layers},
       {"mlp_hidden", c.mlp_hidden}, {"decoder_rank", c.decoder_rank},
       {"learn_edge_weights", c.learn_edge_weights}, {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.d_in = j.at("d_in");
  c.d_hidden = j.at("d_hidden");
  c.layers = j.at("layers");
  c.mlp_hidden = j.at("mlp_hidden");
  c.decoder_rank = j.at("decoder_rank");
  c.learn_edge_weights = j.at("learn_edge_weights");
  c.seed = j.at("seed");
}

namespace param_names {
inline std::string layer(std::size_t l, const char* m) { return "layer" + std::to_string(l) + "." + m; }
inline constexpr const char* decoder = "decoder.D";
inline constexpr const char* drug_embedding = "drug_embedding";
inline constexpr const char* proj_drug = "proj.P1";
inline constexpr const char* proj_gene = "proj.P2";
// The first MLP layer acting on [h_i | h_j] is stored as its two column
// blocks, so it can be applied per node before gathering per edge.
inline constexpr const char* mlp_src = "edge_mlp.W1_src";
inline constexpr const char* mlp_dst = "edge_mlp.W1_dst";
inline constexpr const char* mlp_b1 = "edge_mlp.b1";
inline constexpr const char* mlp_out = "edge_mlp.W2";
inline constexpr const char* mlp_b2 = "edge_mlp.b2";
}  // namespace param_names

/// Glorot-uniform weights, zero biases, N(0, 0.1^2) drug embeddings. Tensors
/// are filled in lexicographic name order from one seeded stream.
inline ParamStore init_params(const ModelConfig& cfg, std::size_t n_drugs) {
  cfg.validate();
  namespace pn = param_names;
  const std::size_t half = cfg.d_hidden / 2;
  ParamStore p;
  p.add(pn::decoder, Tensor(cfg.rank(), cfg.d_hidden));
  p.add(pn::drug_embedding, Tensor(n_drugs, cfg.d_in));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::size_t in = l == 0 ? cfg.d_in : cfg.d_hidden;
    for (const char* m : {"M0", "M1", "M2"}) p.add(pn::layer(l, m), Tensor(half, in));
  }
  if (cfg.learn_edge_weights) {
    p.add(pn::proj_drug, Tensor(cfg.d_hidden, cfg.d_in));
    p.add(pn::proj_gene, Tensor(cfg.d_hidden, cfg.d_in));
    p.add(pn::mlp_src, Tensor(cfg.mlp_hidden, cfg.d_hidden));
    p.add(pn::mlp_dst, Tensor(cfg.mlp_hidden, cfg.d_hidden));
    p.add(pn::mlp_b1, Tensor(1, cfg.mlp_hidden));
    p.add(pn::mlp_out, Tensor(1, cfg.mlp_hidden));
    p.add(pn::mlp_b2, Tensor(1, 1));
  }
  Rng rng(cfg.seed);
  for (auto& [name, t] : p) {
    if (name == pn::mlp_b1 || name == pn::mlp_b2) continue;
    if (name == pn::drug_embedding) {
      for (double& v : t.values()) v = rng.normal(0.0, 0.1);
      continue;
    }
    // W1_src/W1_dst are halves of one out x 2*d_hidden matrix.
    const bool split = name == pn::mlp_src || name == pn::mlp_dst;
    const double fan_in = static_cast<double>(split ? 2 * t.cols() : t.cols());
    const double a = std::sqrt(6.0 / (fan_in + static_cast<double>(t.rows())));
    for (double& v : t.values()) v = rng.uniform(-a, a);
  }
  return p;
}

/// Gene rows fed to the network. The two target-indicator columns enter as
/// (either drug, both drugs) so that exchanging drug slots is a pure node
/// relabeling and the prediction is symmetric in the pair.
inline Tensor gene_inputs(const SampleGraph& sg) {
  const std::size_t ng = sg.node_count() - 2;
  Tensor x(ng, sg.feature_dim());
  for (std::size_t i = 0; i < ng; ++i) {
    auto src = sg.features.row(i + 2);
    auto dst = x.row(i);
    std::copy(src.begin(), src.end(), dst.begin());
    dst[2] = std::max(src[2], src[3]);
    dst[3] = std::min(src[2], src[3]);
  }
  return x;
}

/// Edge sources, destinations, (relation, dst) group ids and 1/|N_r(j)| for
/// a sample graph, in edge order.
struct EdgeIndex {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::vector<std::size_t> group;
  std::vector<double> inv_degree;

  explicit EdgeIndex(const SampleGraph& sg) {
    const std::size_t e = sg.edges.size();
    src.reserve(e);
    dst.reserve(e);
    group.reserve(e);
    inv_degree.reserve(e);
    for (const auto& edge : sg.edges) {
      const std::size_t g = sg.group_of(edge);
      src.push_back(edge.src);
      dst.push_back(edge.dst);
      group.push_back(g);
      inv_degree.push_back(1.0 / static_cast<double>(sg.group_start[g + 1] - sg.group_start[g]));
    }
  }
};

/// v = e / max(group max, eps); a group whose scores are all 0 gets v = 0.
inline Var normalize_by_group_max(Tape& t, Var raw, const std::vector<std::size_t>& group,
                                  std::size_t groups) {
  Var m = t.segment_max(raw, group, groups);
  Var inv = t.guarded_reciprocal(m, kMaxGuard);
  return t.mul(raw, t.gather_rows(inv, group));
}

struct EdgeWeightVars {
  Var raw;     // e, edges x 1
  Var weight;  // v, edges x 1
};

/// Edge-weight learner on drug rows `xd` (2 x d_in) and gene rows `xg`.
inline EdgeWeightVars edge_weight_vars(Tape& t, const SampleGraph& sg, const EdgeIndex& ix, Var xd,
                                       Var xg) {
  namespace pn = param_names;
  Var h = t.concat_rows(t.matmul_nt(xd, t.param(pn::proj_drug)), t.matmul_nt(xg, t.param(pn::proj_gene)));
  Var u = t.matmul_nt(h, t.param(pn::mlp_src));
  Var w = t.matmul_nt(h, t.param(pn::mlp_dst));
  Var pre = t.add_bias(t.add(t.gather_rows(u, ix.src), t.gather_rows(w, ix.dst)), t.param(pn::mlp_b1));
  Var hidden = t.relu(pre);
  Var raw = t.relu(t.add_bias(t.matmul_nt(hidden, t.param(pn::mlp_out)), t.param(pn::mlp_b2)));
  return {raw, normalize_by_group_max(t, raw, ix.group, sg.group_count())};
}

/// One relational message-passing layer. `zd`/`zg` are the drug and gene rows
/// of Z; `weights` (edges x 1) scales messages, or nullptr for all-ones.
inline Var relational_layer(Tape& t, const SampleGraph& sg, const EdgeIndex& ix, Var zd, Var zg,
                            std::size_t l, const Var* weights) {
  namespace pn = param_names;
  Var z = t.concat_rows(zd, zg);
  Var h = t.concat_rows(t.matmul_nt(zd, t.param(pn::layer(l, "M1"))),
                        t.matmul_nt(zg, t.param(pn::layer(l, "M2"))));
  Var msg = t.gather_rows(h, ix.src);
  if (weights) msg = t.scale_rows(msg, *weights);
  Var agg = t.scatter_add_rows(msg, ix.dst, sg.node_count(), ix.inv_degree);
  Var self = t.matmul_nt(z, t.param(pn::layer(l, "M0")));
  return t.relu(t.concat_cols(self, agg));
}

/// x1^T D^T D x2 for column or row vectors of length D.cols().
inline double decode(std::span<const double> x1, std::span<const double> x2, const Tensor& d) {
  if (x1.size() != d.cols() || x2.size() != d.cols()) {
    throw ShapeError("decode: vectors of length " + std::to_string(x1.size()) + " and " +
                     std::to_string(x2.size()) + " for D " + d.shape_string());
  }
  double score = 0.0;
  for (std::size_t r = 0; r < d.rows(); ++r) {
    double a = 0.0, b = 0.0;
    for (std::size_t c = 0; c < d.cols(); ++c) {
      a += d(r, c) * x1[c];
      b += d(r, c) * x2[c];
    }
    score += a * b;
  }
  return score;
}

struct ForwardOptions {
  bool unit_weights = false;  // replace learned v by 1 (diagnostics)
};

struct ForwardVars {
  Var score;
  std::optional<EdgeWeightVars> edge;
  std::vector<Var> layers;  // Z^0 .. Z^L
};

/// Records the whole forward pass for one sample on `t`. `drug_rows` are the
/// embedding-table rows of the sample's drug A and drug B.
inline ForwardVars build_forward(Tape& t, const SampleGraph& sg, const ModelConfig& cfg,
                                 std::array<std::size_t, 2> drug_rows, const ForwardOptions& opt = {}) {
  if (sg.feature_dim() != cfg.d_in) {
    throw ShapeError("forward: sample features have width " + std::to_string(sg.feature_dim()) +
                     ", model expects d_in = " + std::to_string(cfg.d_in));
  }
  const EdgeIndex ix(sg);
  std::vector<std::size_t> gene_rows(sg.node_count() - 2);
  for (std::size_t i = 0; i < gene_rows.size(); ++i) gene_rows[i] = i + 2;

  ForwardVars out;
  Var zd = t.gather_rows(t.param(param_names::drug_embedding), {drug_rows[0], drug_rows[1]});
  Var zg = t.constant(gene_inputs(sg));
  out.layers.push_back(t.concat_rows(zd, zg));

  std::optional<Var> layer0_weights;
  if (cfg.learn_edge_weights) {
    out.edge = edge_weight_vars(t, sg, ix, zd, zg);
    layer0_weights = opt.unit_weights ? t.constant(Tensor(sg.edges.size(), 1, 1.0)) : out.edge->weight;
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const Var* w = (l == 0 && layer0_weights) ? &*layer0_weights : nullptr;
    Var z = relational_layer(t, sg, ix, zd, zg, l, w);
    out.layers.push_back(z);
    zd = t.gather_rows(z, {0, 1});
    if (l + 1 < cfg.layers) zg = t.gather_rows(z, gene_rows);
  }
  Var y = t.matmul_nt(zd, t.param(param_names::decoder));
  out.score = t.sum(t.mul(t.gather_rows(y, {0}), t.gather_rows(y, {1})));
  return out;
}

/// Squared error of one sample's prediction against its score.
inline Var sample_loss(Tape& t, const SampleGraph& sg, const ModelConfig& cfg,
                       std::array<std::size_t, 2> drug_rows) {
  ForwardVars f = build_forward(t, sg, cfg, drug_rows);
  return t.squared_error(f.score, t.constant(Tensor::scalar(sg.score)));
}

/// Learned layer-0 weights of one sample, keyed by node labels.
struct EdgeWeightMap {
  struct Entry {
    std::string src;
    std::string dst;
    Relation relation = Relation::GeneGene;
    double raw = 0.0;     // e
    double weight = 0.0;  // v
  };
  std::string sample;
  std::vector<Entry> entries;         // sample-graph edge order
  std::vector<std::size_t> group;     // (relation, dst) group per entry
};

struct ForwardTrace {
  double score = 0.0;
  EdgeWeightMap weights;   // empty when edge weights are not learned
  std::vector<Tensor> layers;
};

/// A trained or initialized model: configuration, drug vocabulary, parameters.
class IdspModel {
 public:
  IdspModel() = default;
  IdspModel(ModelConfig cfg, std::vector<std::string> drugs)
      : config_(cfg), drugs_(std::move(drugs)), params_(init_params(cfg, drugs_.size())) {}
  IdspModel(ModelConfig cfg, std::vector<std::string> drugs, ParamStore params)
      : config_(cfg), drugs_(std::move(drugs)), params_(std::move(params)) {
    config_.validate();
    const ParamStore expected = init_params(config_, drugs_.size());
    if (!expected.same_layout(params_)) throw DataError("model parameters do not match the configuration");
  }

  const ModelConfig& config() const { return config_; }
  const std::vector<std::string>& drugs() const { return drugs_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  std::array<std::size_t, 2> drug_rows(const SampleGraph& sg) const {
    return {row_of(sg.drug_a), row_of(sg.drug_b)};
  }

  std::size_t row_of(std::string_view drug) const {
    auto it = std::find(drugs_.begin(), drugs_.end(), drug);
    if (it == drugs_.end()) throw DataError("drug '" + std::string(drug) + "' is not in the model vocabulary");
    return static_cast<std::size_t>(it - drugs_.begin());
  }

  double predict(const SampleGraph& sg) const {
    Tape t(params_);
    return t.scalar(build_forward(t, sg, config_, drug_rows(sg)).score);
  }

  ForwardTrace trace(const SampleGraph& sg, const ForwardOptions& opt = {}) const {
    Tape t(params_);
    ForwardVars f = build_forward(t, sg, config_, drug_rows(sg), opt);
    ForwardTrace out;
    out.score = t.scalar(f.score);
    for (Var z : f.layers) out.layers.push_back(t.value(z));
    out.weights.sample = sg.id();
    if (f.edge) {
      const Tensor& raw = t.value(f.edge->raw);
      const Tensor& v = t.value(f.edge->weight);
      for (std::size_t k = 0; k < sg.edges.size(); ++k) {
        const auto& e = sg.edges[k];
        out.weights.entries.push_back({sg.labels[e.src], sg.labels[e.dst], e.relation, raw[k], v[k]});
        out.weights.group.push_back(sg.group_of(e));
      }
    }
    return out;
  }

  /// Loss value and gradient for one sample.
  GradResult loss_and_grad(const SampleGraph& sg) const {
    const auto rows = drug_rows(sg);
    return forward_backward([&](Tape& t) { return sample_loss(t, sg, config_, rows); }, params_);
  }

  nlohmann::json meta() const {
    return {{"model", config_}, {"drugs", drugs_}};
  }

 private:
  ModelConfig config_;
  std::vector<std::string> drugs_;
  ParamStore params_;
};

}  // namespace idsp
