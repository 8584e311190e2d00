#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "idsp/model.hpp"
#include "idsp/random.hpp"
#include "idsp/synthdata.hpp"

using namespace idsp;

namespace {

using Vec = std::vector<double>;

Vec matvec(const Tensor& w, const Vec& x) {
  Vec y(w.rows(), 0.0);
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 0; c < w.cols(); ++c) y[r] += w(r, c) * x[c];
  return y;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

// Forward pass written with plain loops over nodes and edges.
double oracle_forward(const IdspModel& m, const SampleGraph& sg) {
  const ModelConfig& cfg = m.config();
  const ParamStore& p = m.params();
  const std::size_t n = sg.node_count();
  std::vector<Vec> z(n);
  const auto rows = m.drug_rows(sg);
  for (int d = 0; d < 2; ++d) {
    auto r = p.at("drug_embedding").row(rows[d]);
    z[d].assign(r.begin(), r.end());
  }
  for (std::size_t i = 2; i < n; ++i) {
    auto f = sg.features.row(i);
    z[i].assign(f.begin(), f.end());
    z[i][2] = f[2] + f[3] > 0.0 ? 1.0 : 0.0;
    z[i][3] = f[2] * f[3];
  }
  const std::size_t ne = sg.edges.size();
  Vec w(ne, 1.0);
  if (cfg.learn_edge_weights) {
    std::vector<Vec> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = matvec(p.at(i < 2 ? "proj.P1" : "proj.P2"), z[i]);
    Vec e(ne);
    for (std::size_t k = 0; k < ne; ++k) {
      const Vec a = matvec(p.at("edge_mlp.W1_src"), h[sg.edges[k].src]);
      const Vec b = matvec(p.at("edge_mlp.W1_dst"), h[sg.edges[k].dst]);
      double s = p.at("edge_mlp.b2")[0];
      for (std::size_t u = 0; u < a.size(); ++u)
        s += p.at("edge_mlp.W2")(0, u) * relu(a[u] + b[u] + p.at("edge_mlp.b1")(0, u));
      e[k] = relu(s);
    }
    for (std::size_t k = 0; k < ne; ++k) {
      double mx = 0.0;
      for (std::size_t q = 0; q < ne; ++q)
        if (sg.edges[q].dst == sg.edges[k].dst && sg.edges[q].relation == sg.edges[k].relation) mx = std::max(mx, e[q]);
      w[k] = e[k] / std::max(mx, 1e-12);
    }
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    std::vector<Vec> h(n);
    for (std::size_t i = 0; i < n; ++i) h[i] = matvec(p.at(pre + (i < 2 ? "M1" : "M2")), z[i]);
    std::vector<Vec> next(n);
    for (std::size_t j = 0; j < n; ++j) {
      Vec self = matvec(p.at(pre + "M0"), z[j]);
      Vec agg(self.size(), 0.0);
      for (Relation r : {Relation::GeneGene, Relation::DrugGene}) {
        std::size_t deg = 0;
        Vec sum(self.size(), 0.0);
        for (std::size_t k = 0; k < ne; ++k) {
          if (sg.edges[k].dst != j || sg.edges[k].relation != r) continue;
          ++deg;
          const double wk = l == 0 ? w[k] : 1.0;
          for (std::size_t c = 0; c < sum.size(); ++c) sum[c] += wk * h[sg.edges[k].src][c];
        }
        for (std::size_t c = 0; c < sum.size(); ++c)
          if (deg > 0) agg[c] += sum[c] / static_cast<double>(deg);
      }
      next[j] = self;
      next[j].insert(next[j].end(), agg.begin(), agg.end());
      for (double& v : next[j]) v = relu(v);
    }
    z = next;
  }
  const Vec a = matvec(p.at("decoder.D"), z[0]);
  const Vec b = matvec(p.at("decoder.D"), z[1]);
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

struct Case {
  Fixture f;
  IdspModel model;
  SampleGraph sg;
};

Case make_case(std::uint64_t seed, std::size_t genes = 8, bool learn = true, std::size_t layers = 3) {
  Case c{random_fixture(seed, genes), {}, {}};
  ModelConfig cfg;
  cfg.d_hidden = 8;
  cfg.mlp_hidden = 6;
  cfg.layers = layers;
  cfg.learn_edge_weights = learn;
  cfg.seed = seed;
  c.model = IdspModel(cfg, c.f.catalog.ids, random_params(cfg, c.f.catalog.size(), derive_seed(seed, 7)));
  c.sg = build_sample_graph(c.f.graph, c.f.catalog, c.f.profiles, c.f.sample, {layers, true, true});
  return c;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(Model, ForwardMatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const Case c = make_case(seed, 6 + seed % 5, seed % 3 != 0, 1 + seed % 3);
    EXPECT_LT(rel_diff(c.model.predict(c.sg), oracle_forward(c.model, c.sg)), 1e-12) << "seed " << seed;
  }
}

TEST(Model, InitParamsLayoutAndDeterminism) {
  ModelConfig cfg;
  cfg.seed = 3;
  const ParamStore a = init_params(cfg, 5);
  EXPECT_EQ(a, init_params(cfg, 5));
  cfg.seed = 4;
  EXPECT_NE(a, init_params(cfg, 5));
  EXPECT_EQ(a.at("drug_embedding").rows(), 5u);
  EXPECT_EQ(a.at("layer0.M0").cols(), 4u);
  EXPECT_EQ(a.at("layer1.M0").cols(), 32u);
  EXPECT_EQ(a.at("layer2.M2").rows(), 16u);
  for (double v : a.at("edge_mlp.b1").values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(a.at("edge_mlp.b2")[0], 0.0);
  const double bound = std::sqrt(6.0 / (32.0 + 32.0));
  for (double v : a.at("decoder.D").values()) EXPECT_LE(std::abs(v), bound);
  ModelConfig plain;
  plain.learn_edge_weights = false;
  EXPECT_THROW(init_params(plain, 2).at("proj.P1"), ShapeError);
  ModelConfig odd;
  odd.d_hidden = 7;
  EXPECT_THROW(init_params(odd, 2), UsageError);
}

TEST(Model, ParamLayoutMismatchRejected) {
  ModelConfig cfg;
  EXPECT_THROW(IdspModel(cfg, {"a", "b"}, init_params(cfg, 3)), DataError);
}

TEST(Model, FeatureWidthMismatchIsShapeError) {
  Case c = make_case(1);
  ModelConfig cfg = c.model.config();
  cfg.d_in = 5;
  const IdspModel wide(cfg, c.f.catalog.ids);
  EXPECT_THROW(wide.predict(c.sg), ShapeError);
}

TEST(Model, UnknownDrugIsDataError) {
  const Case c = make_case(2);
  SampleGraph sg = c.sg;
  sg.drug_a = "DX";
  EXPECT_THROW(c.model.predict(sg), DataError);
}

TEST(Decoder, SymmetricAndNonNegativeOnDiagonal) {
  Rng r(4);
  for (int k = 0; k < 200; ++k) {
    Tensor d(5, 6);
    for (double& v : d.values()) v = r.normal();
    Vec x(6), y(6);
    for (auto& v : x) v = r.normal();
    for (auto& v : y) v = r.normal();
    EXPECT_NEAR(decode(x, y, d), decode(y, x, d), 1e-12);
    EXPECT_GE(decode(x, x, d), 0.0);
  }
  EXPECT_THROW(decode(Vec(3), Vec(6), Tensor(5, 6)), ShapeError);
}

TEST(Model, ScoreEqualsDecodeOfFinalDrugRows) {
  const Case c = make_case(5);
  const ForwardTrace tr = c.model.trace(c.sg);
  ASSERT_EQ(tr.layers.size(), c.model.config().layers + 1);
  const Tensor& z = tr.layers.back();
  EXPECT_NEAR(tr.score, decode(z.row(0), z.row(1), c.model.params().at("decoder.D")), 1e-12);
}

TEST(EdgeWeights, MaxIsOnePerGroupOrAllZero) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Case c = make_case(seed, 10);
    const ForwardTrace tr = c.model.trace(c.sg);
    ASSERT_EQ(tr.weights.entries.size(), c.sg.edges.size());
    std::map<std::size_t, std::pair<double, double>> per_group;  // max v, max e
    for (std::size_t k = 0; k < tr.weights.entries.size(); ++k) {
      const auto& e = tr.weights.entries[k];
      EXPECT_GE(e.weight, 0.0);
      EXPECT_LE(e.weight, 1.0 + 1e-15);
      auto& slot = per_group[tr.weights.group[k]];
      slot.first = std::max(slot.first, e.weight);
      slot.second = std::max(slot.second, e.raw);
    }
    for (const auto& [g, m] : per_group) {
      if (m.second == 0.0) EXPECT_EQ(m.first, 0.0);
      else EXPECT_NEAR(m.first, 1.0, 1e-12);
    }
  }
}

TEST(EdgeWeights, AllZeroScoresGiveZeroWeights) {
  Case c = make_case(3);
  // a negative output bias with zero output weights forces every e to 0
  for (double& v : c.model.params().at("edge_mlp.W2").values()) v = 0.0;
  c.model.params().at("edge_mlp.b2")[0] = -1.0;
  const ForwardTrace tr = c.model.trace(c.sg);
  for (const auto& e : tr.weights.entries) {
    EXPECT_EQ(e.raw, 0.0);
    EXPECT_EQ(e.weight, 0.0);
  }
  EXPECT_TRUE(std::isfinite(tr.score));
}

TEST(EdgeWeights, UnitWeightOptionMatchesAllOnes) {
  Case c = make_case(6);
  for (double& v : c.model.params().at("edge_mlp.W2").values()) v = 0.0;
  c.model.params().at("edge_mlp.b2")[0] = 2.0;  // every e equal, so every v = 1
  EXPECT_NEAR(c.model.trace(c.sg, {true}).score, c.model.predict(c.sg), 1e-12);
}

TEST(Model, PermutationInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Case c = make_case(seed, 12);
    std::vector<std::size_t> order(c.sg.node_count() - 2);
    std::iota(order.begin(), order.end(), 0);
    Rng r(seed + 50);
    r.shuffle(order);
    const SampleGraph perm = c.sg.with_gene_order(order);
    EXPECT_LT(rel_diff(c.model.predict(perm), c.model.predict(c.sg)), 1e-9) << "seed " << seed;
    std::map<std::tuple<std::string, std::string, Relation>, double> a, b;
    for (const auto& e : c.model.trace(c.sg).weights.entries) a[{e.src, e.dst, e.relation}] = e.weight;
    for (const auto& e : c.model.trace(perm).weights.entries) b[{e.src, e.dst, e.relation}] = e.weight;
    ASSERT_EQ(a.size(), b.size());
    for (const auto& [k, v] : a) EXPECT_NEAR(b.at(k), v, 1e-9);
  }
}

TEST(Model, PruningDoesNotChangePrediction) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const Case c = make_case(seed, 30);
    const SampleGraph full = build_sample_graph(c.f.graph, c.f.catalog, c.f.profiles, c.f.sample, {3, false, true});
    EXPECT_LE(c.sg.node_count(), full.node_count());
    EXPECT_LT(rel_diff(c.model.predict(full), c.model.predict(c.sg)), 1e-9) << "seed " << seed;
  }
}

TEST(Model, DrugSwapSymmetry) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const Case c = make_case(seed, 9);
    SynergySample s = c.f.sample;
    std::swap(s.drug_a, s.drug_b);
    const SampleGraph swapped = build_sample_graph(c.f.graph, c.f.catalog, c.f.profiles, s, {3, true, true});
    EXPECT_LT(rel_diff(c.model.predict(swapped), c.model.predict(c.sg)), 1e-10) << "seed " << seed;
  }
}

TEST(Model, LossGradientPassesFiniteDifferenceCheck) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const GradCheckReport rep = fixture_grad_check(seed);
    EXPECT_TRUE(rep.passed()) << "seed " << seed << " max rel error " << rep.max_rel_error;
  }
}

TEST(Model, LossAndGradValueIsSquaredError) {
  const Case c = make_case(8);
  const double pred = c.model.predict(c.sg);
  const GradResult g = c.model.loss_and_grad(c.sg);
  EXPECT_NEAR(g.value, (pred - c.sg.score) * (pred - c.sg.score), 1e-12);
  EXPECT_TRUE(g.grads.same_layout(c.model.params()));
}

TEST(Model, MetaRoundTripsConfig) {
  const Case c = make_case(9);
  const nlohmann::json j = c.model.meta();
  EXPECT_EQ(j.at("model").get<ModelConfig>(), c.model.config());
  EXPECT_EQ(j.at("drugs").get<std::vector<std::string>>(), c.model.drugs());
}
