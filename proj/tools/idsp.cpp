// idsp: command-line entry point.
//
// Exit codes: 0 success, 1 data or validation error, 2 usage error.

#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "idsp/checkpoint.hpp"
#include "idsp/config.hpp"
#include "idsp/explain.hpp"
#include "idsp/graphdata.hpp"
#include "idsp/model.hpp"
#include "idsp/synthdata.hpp"
#include "idsp/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kCheckpointFile = "checkpoint.idsp";

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw idsp::DataError("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw idsp::DataError("cannot write " + path.string());
  os << j.dump(2) << '\n';
}

fs::path ensure_out(const std::string& out) {
  fs::path p(out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw idsp::DataError("cannot create output directory " + out + ": " + ec.message());
  return p;
}

std::vector<fs::path> data_files(const fs::path& dir) {
  using F = idsp::DataFiles;
  return {dir / F::genes, dir / F::gene_edges, dir / F::drugs, dir / F::drug_targets, dir / F::profiles, dir / F::synergy};
}

/// config.resolved.json plus manifest.json for one run.
void write_run_record(const fs::path& out, const std::string& command, const json& resolved, const json& seeds,
                      const std::vector<fs::path>& inputs) {
  write_json(out / "config.resolved.json", resolved);
  json files = json::array();
  for (const auto& f : inputs) {
    if (fs::is_regular_file(f)) files.push_back({{"path", f.generic_string()}, {"sha256", sha256_file(f)}});
  }
  write_json(out / "manifest.json", {{"command", command}, {"version", "1.0.0"}, {"seeds", seeds}, {"inputs", files}});
}

std::pair<std::string, std::string> parse_pair(const std::string& s) {
  const auto comma = s.find(',');
  if (comma == std::string::npos || comma == 0 || comma + 1 == s.size() || s.find(',', comma + 1) != std::string::npos)
    throw idsp::UsageError("--pair must look like DRUG_A,DRUG_B");
  return {idsp::csv::trim(s.substr(0, comma)), idsp::csv::trim(s.substr(comma + 1))};
}

void print_report(const idsp::DataBundle& b) {
  const auto& r = b.report;
  std::cout << "genes " << r.genes << "\npathways " << r.pathways << "\nedges " << r.edges << "\ndrugs "
            << b.catalog.size() << "\ncell_lines " << b.profiles.cell_lines.size() << "\nsamples " << b.samples.size()
            << "\nisolated_genes " << r.isolated_genes << "\ndropped_drugs " << r.dropped_drugs
            << "\ndropped_targets " << r.dropped_targets << "\nimputed_profiles " << r.imputed_profiles
            << "\nduplicate_samples " << r.duplicate_samples << '\n';
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

json report_json(const idsp::DataBundle& b) {
  const auto& r = b.report;
  return {{"genes", r.genes},
          {"pathways", r.pathways},
          {"edges", r.edges},
          {"drugs", b.catalog.size()},
          {"cell_lines", b.profiles.cell_lines.size()},
          {"samples", b.samples.size()},
          {"isolated_genes", r.isolated_genes},
          {"dropped_drugs", r.dropped_drugs},
          {"dropped_targets", r.dropped_targets},
          {"imputed_profiles", r.imputed_profiles},
          {"duplicate_samples", r.duplicate_samples},
          {"warnings", r.warnings}};
}

// Everything a checkpoint needs to be evaluated again on its own.
struct LoadedModel {
  idsp::IdspModel model;
  idsp::RunConfig config;
  std::set<std::string> heldout;
  std::vector<std::string> test_keys;
};

LoadedModel open_checkpoint(const std::string& path) {
  idsp::Checkpoint ck = idsp::load_checkpoint(path);
  LoadedModel m;
  try {
    const auto cfg = ck.meta.at("model").get<idsp::ModelConfig>();
    const auto drugs = ck.meta.at("drugs").get<std::vector<std::string>>();
    m.model = idsp::IdspModel(cfg, drugs, std::move(ck.params));
    if (ck.meta.contains("run")) {
      json run = ck.meta.at("run");
      idsp::apply_config(m.config, run);
    }
    m.config.model = cfg;
    if (ck.meta.contains("heldout_genes"))
      for (const auto& g : ck.meta.at("heldout_genes")) m.heldout.insert(g.get<std::string>());
    if (ck.meta.contains("test_samples")) m.test_keys = ck.meta.at("test_samples").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw idsp::DataError(path + ": malformed checkpoint manifest: " + e.what());
  }
  return m;
}

idsp::SampleGraph sample_for(const LoadedModel& lm, const idsp::DataBundle& b, const idsp::SignalingGraph& view,
                             const std::string& drug_a, const std::string& drug_b, const std::string& cell) {
  if (!b.catalog.find(drug_a)) throw idsp::DataError("unknown drug '" + drug_a + "'");
  if (!b.catalog.find(drug_b)) throw idsp::DataError("unknown drug '" + drug_b + "'");
  if (!b.profiles.find_cell(cell)) throw idsp::DataError("unknown cell line '" + cell + "'");
  const auto profiles = idsp::model_profiles(b.profiles, lm.config.train.zscore);
  idsp::SynergySample s{drug_a, drug_b, cell, 0.0};
  for (const auto& x : b.samples)
    if ((x.drug_a == drug_a && x.drug_b == drug_b) || (x.drug_a == drug_b && x.drug_b == drug_a))
      if (x.cell_line == cell) s.score = x.score;
  return idsp::build_sample_graph(view, b.catalog, profiles, s, idsp::sample_options(lm.model.config(), lm.config.train));
}

// ---- subcommands ---------------------------------------------------------------

struct Options {
  std::string config, data_dir, out, checkpoint, pair, cell, compare_cell, mode = "target", preset, holdout_mode,
      setting, split = "test";
  std::optional<std::uint64_t> seed;
  std::optional<double> inductive_fraction, lr, noise_sd, relative_noise, planted_fraction;
  std::optional<std::size_t> epochs, threads, n_genes, n_pathways, n_drugs, n_cells, n_samples;
  double tau = 0.5, alpha = 0.05, tol = 1e-4;
  std::size_t top_k = 10, fixtures = 20;
  bool inductive = false, impute = false;
};

int cmd_validate(const Options& o) {
  const idsp::DataBundle b = idsp::load_bundle(o.data_dir, {o.impute});
  print_report(b);
  if (!o.out.empty()) {
    const fs::path out = ensure_out(o.out);
    write_json(out / "ingest_report.json", report_json(b));
    write_run_record(out, "validate", {{"data_dir", o.data_dir}, {"impute_missing", o.impute}}, json::object(),
                     data_files(o.data_dir));
  }
  return 0;
}

int cmd_train(const Options& o) {
  idsp::RunConfig rc;
  if (!o.config.empty()) rc = idsp::load_config(o.config);
  if (!o.data_dir.empty()) rc.data_dir = o.data_dir;
  if (o.seed) rc.train.seed = rc.model.seed = *o.seed;
  if (o.inductive_fraction) rc.train.inductive_fraction = *o.inductive_fraction;
  if (!o.holdout_mode.empty()) rc.train.holdout_mode = idsp::parse_holdout_mode(o.holdout_mode);
  if (!o.setting.empty()) rc.train.setting = idsp::parse_setting(o.setting);
  if (o.inductive) rc.train.setting = idsp::Setting::Inductive;
  if (o.epochs) rc.train.epochs = *o.epochs;
  if (o.lr) rc.train.lr = *o.lr;
  if (o.threads) rc.train.threads = *o.threads;
  if (o.impute) rc.impute_missing = true;
  if (rc.data_dir.empty()) throw idsp::UsageError("train: no data directory (set data_dir in --config or pass --data-dir)");
  rc.model.validate();
  rc.train.validate();

  const idsp::DataBundle b = idsp::load_bundle(rc.data_dir, {rc.impute_missing});
  const fs::path out = ensure_out(o.out);
  const idsp::TrainResult r = idsp::train(b, rc.model, rc.train);

  json meta = r.model.meta();
  rc.model = r.model.config();
  meta["run"] = idsp::to_json(rc);
  meta["heldout_genes"] = r.heldout_genes;
  meta["withheld_pathways"] = r.withheld_pathways;
  std::vector<std::string> test_keys;
  for (std::size_t i : r.test_samples) test_keys.push_back(b.samples[i].key());
  meta["test_samples"] = test_keys;
  meta["best_epoch"] = r.best_epoch;
  idsp::save_checkpoint(out / kCheckpointFile, {r.model.params(), meta});
  idsp::write_history_csv(out / "history.csv", r.history);
  if (r.test) {
    json m = idsp::metrics_json(*r.test, rc.train.setting);
    if (rc.train.setting == idsp::Setting::Inductive) {
      m["heldout_genes"] = r.heldout_genes.size();
      m["heldout_genes_in_test"] = r.heldout_genes_in_test;
    }
    write_json(out / "metrics.json", m);
  }
  write_run_record(out, "train", idsp::to_json(rc), {{"seed", rc.train.seed}, {"model_seed", rc.model.seed}},
                   data_files(rc.data_dir));
  std::cout << "trained " << r.history.size() << " epochs, best epoch " << r.best_epoch << '\n';
  if (r.test) {
    std::cout << "test mse " << idsp::format_real(r.test->mse) << " pearson "
              << (r.test->pearson ? idsp::format_real(*r.test->pearson) : std::string("undefined")) << " n "
              << r.test->n << '\n';
  }
  if (r.excluded_samples > 0) std::cerr << "warning: " << r.excluded_samples << " samples excluded (no targets in view)\n";
  return 0;
}

int cmd_eval(const Options& o) {
  LoadedModel lm = open_checkpoint(o.checkpoint);
  const std::string dir = o.data_dir.empty() ? lm.config.data_dir.string() : o.data_dir;
  if (dir.empty()) throw idsp::UsageError("eval: pass --data-dir");
  const idsp::DataBundle b = idsp::load_bundle(dir, {lm.config.impute_missing});
  const idsp::SignalingGraph view = o.inductive ? b.graph : b.graph.without_genes(lm.heldout);

  std::vector<std::size_t> indices;
  if (o.split == "all") {
    for (std::size_t i = 0; i < b.samples.size(); ++i) indices.push_back(i);
  } else if (o.split == "test") {
    std::map<std::string, std::size_t> by_key;
    for (std::size_t i = 0; i < b.samples.size(); ++i) by_key.emplace(b.samples[i].key(), i);
    for (const auto& k : lm.test_keys) {
      auto it = by_key.find(k);
      if (it == by_key.end()) throw idsp::DataError("test sample '" + k + "' from the checkpoint is not in " + dir);
      indices.push_back(it->second);
    }
    if (indices.empty()) throw idsp::DataError("checkpoint records no test samples; use --split all");
  } else {
    throw idsp::UsageError("--split must be test or all");
  }
  const auto profiles = idsp::model_profiles(b.profiles, lm.config.train.zscore);
  const auto gs = idsp::build_graphs(view, b.catalog, profiles, b.samples, indices,
                                     idsp::sample_options(lm.model.config(), lm.config.train));
  if (gs.graphs.empty()) throw idsp::DataError("eval: no evaluable samples");
  const idsp::Metrics m = idsp::evaluate(lm.model, gs.graphs);
  const fs::path out = ensure_out(o.out);
  json mj = idsp::metrics_json(m, o.inductive ? idsp::Setting::Inductive : idsp::Setting::Transductive);
  mj["excluded"] = gs.excluded;
  write_json(out / "metrics.json", mj);
  std::vector<fs::path> inputs = data_files(dir);
  inputs.emplace_back(o.checkpoint);
  write_run_record(out, "eval", {{"checkpoint", o.checkpoint}, {"data_dir", dir}, {"inductive", o.inductive}, {"split", o.split}},
                   {{"seed", lm.config.train.seed}}, inputs);
  std::cout << "mse " << idsp::format_real(m.mse) << " pearson "
            << (m.pearson ? idsp::format_real(*m.pearson) : std::string("undefined")) << " n " << m.n << '\n';
  return 0;
}

int cmd_predict(const Options& o) {
  LoadedModel lm = open_checkpoint(o.checkpoint);
  const std::string dir = o.data_dir.empty() ? lm.config.data_dir.string() : o.data_dir;
  if (dir.empty()) throw idsp::UsageError("predict: pass --data-dir");
  const idsp::DataBundle b = idsp::load_bundle(dir, {lm.config.impute_missing});
  const auto [a, d] = parse_pair(o.pair);
  const auto sg = sample_for(lm, b, b.graph, a, d, o.cell);
  const double score = lm.model.predict(sg);
  std::cout << idsp::format_real(score) << '\n';
  if (!o.out.empty()) {
    const fs::path out = ensure_out(o.out);
    write_json(out / "prediction.json", {{"drug_a", a}, {"drug_b", d}, {"cell_line", o.cell}, {"score", score}});
    std::vector<fs::path> inputs = data_files(dir);
    inputs.emplace_back(o.checkpoint);
    write_run_record(out, "predict", {{"checkpoint", o.checkpoint}, {"data_dir", dir}, {"pair", o.pair}, {"cell", o.cell}},
                     json::object(), inputs);
  }
  return 0;
}

int cmd_explain(const Options& o) {
  LoadedModel lm = open_checkpoint(o.checkpoint);
  const std::string dir = o.data_dir.empty() ? lm.config.data_dir.string() : o.data_dir;
  if (dir.empty()) throw idsp::UsageError("explain: pass --data-dir");
  const idsp::DataBundle b = idsp::load_bundle(dir, {lm.config.impute_missing});
  const auto [a, d] = parse_pair(o.pair);
  const fs::path out = ensure_out(o.out);

  const auto sg = sample_for(lm, b, b.graph, a, d, o.cell);
  const idsp::EdgeWeightMap imp = idsp::extract_importance(lm.model, sg);
  const idsp::SalientSubgraph s = idsp::salient(imp, sg, o.tau);
  {
    std::ofstream os(out / "salient.dot", std::ios::trunc);
    idsp::write_dot(os, s);
  }
  write_json(out / "salient.json", idsp::to_json(s));
  {
    std::ofstream os(out / "importance.csv", std::ios::trunc);
    os << "src,dst,relation,e,v\n";
    for (const auto& e : imp.entries)
      os << e.src << ',' << e.dst << ',' << idsp::relation_name(e.relation) << ',' << idsp::format_real(e.raw) << ','
         << idsp::format_real(e.weight) << '\n';
  }
  if (!o.compare_cell.empty()) {
    // every sample of each cell line in the data directory
    std::vector<idsp::SalientSubgraph> sa, sb;
    for (const auto& x : b.samples) {
      if (x.cell_line != o.cell && x.cell_line != o.compare_cell) continue;
      const auto g = sample_for(lm, b, b.graph, x.drug_a, x.drug_b, x.cell_line);
      (x.cell_line == o.cell ? sa : sb).push_back(idsp::salient(idsp::extract_importance(lm.model, g), g, o.tau));
    }
    if (sb.empty()) throw idsp::DataError("no samples for cell line '" + o.compare_cell + "'");
    write_json(out / "compare.json", idsp::to_json(idsp::compare_cell_lines(sa, sb, o.top_k)));
  }
  std::vector<fs::path> inputs = data_files(dir);
  inputs.emplace_back(o.checkpoint);
  write_run_record(out, "explain",
                   {{"checkpoint", o.checkpoint}, {"data_dir", dir}, {"pair", o.pair}, {"cell", o.cell}, {"tau", o.tau},
                    {"compare_cell", o.compare_cell}, {"top_k", o.top_k}},
                   json::object(), inputs);
  std::cout << s.edges.size() << " salient edges above tau " << o.tau << '\n';
  return 0;
}

int cmd_screen(const Options& o) {
  const idsp::DataBundle b = idsp::load_bundle(o.data_dir, {o.impute});
  idsp::ScreenReport r;
  if (o.mode == "target")
    r = idsp::target_screen(b.samples, b.catalog, b.graph, o.alpha);
  else if (o.mode == "twohop")
    r = idsp::twohop_screen(b.samples, b.catalog, b.graph, o.alpha);
  else
    throw idsp::UsageError("--mode must be target or twohop");
  const fs::path out = ensure_out(o.out);
  {
    std::ofstream os(out / "ttest.csv", std::ios::trunc);
    idsp::write_screen_csv(os, r);
  }
  json skipped = json::array();
  for (const auto& s : r.skipped)
    skipped.push_back({{"gene", s.gene}, {"n_with", s.n_with}, {"n_without", s.n_without}, {"reason", s.reason}});
  write_json(out / "screen_summary.json", {{"mode", o.mode},
                                           {"alpha", o.alpha},
                                           {"screened", r.results.size()},
                                           {"p_below_alpha", r.count_p_below_alpha()},
                                           {"abs_t_above_alpha", r.count_abs_t_above_alpha()},
                                           {"skipped", skipped}});
  write_run_record(out, "screen", {{"data_dir", o.data_dir}, {"mode", o.mode}, {"alpha", o.alpha}}, json::object(),
                   data_files(o.data_dir));
  std::cout << "screened " << r.results.size() << " genes, skipped " << r.skipped.size() << '\n'
            << "significant (p < alpha): " << r.count_p_below_alpha() << '\n'
            << "alternative reading (|t| > alpha): " << r.count_abs_t_above_alpha() << '\n';
  return 0;
}

int cmd_gen(const Options& o) {
  idsp::SynthParams p;
  double relative_noise = 0.0;
  if (o.preset == "desk") {
    p = idsp::desk_preset();
    relative_noise = 0.1;
  } else if (o.preset == "tiny") {
    p = idsp::tiny_preset();
  } else if (!o.preset.empty()) {
    throw idsp::UsageError("--preset must be desk or tiny");
  }
  if (o.n_genes) p.n_genes = *o.n_genes;
  if (o.n_pathways) p.n_pathways = *o.n_pathways;
  if (o.n_drugs) p.n_drugs = *o.n_drugs;
  if (o.n_cells) p.n_cells = *o.n_cells;
  if (o.n_samples) p.n_samples = *o.n_samples;
  if (o.planted_fraction) p.planted_fraction = *o.planted_fraction;
  if (o.seed) p.seed = *o.seed;
  if (o.relative_noise) relative_noise = *o.relative_noise;
  if (o.noise_sd) {
    p.noise_sd = *o.noise_sd;
    relative_noise = 0.0;
  }
  if (relative_noise < 0.0) throw idsp::UsageError("--relative-noise must be >= 0");
  p.validate();
  if (relative_noise > 0.0) p.noise_sd = relative_noise * idsp::score_sd(idsp::generate(p).samples);
  const idsp::PlantedWorld w = idsp::generate(p);
  const fs::path out = ensure_out(o.out);
  idsp::write_world(w, out);
  json cfg = idsp::synthetic_train_config(p);
  write_json(out / "train.json", cfg);
  json params = {{"n_genes", p.n_genes},   {"n_pathways", p.n_pathways},
                 {"n_drugs", p.n_drugs},   {"n_cells", p.n_cells},
                 {"n_samples", p.n_samples}, {"planted_fraction", p.planted_fraction},
                 {"noise_sd", p.noise_sd}, {"seed", p.seed}};
  write_run_record(out, "gen", params, {{"seed", p.seed}}, {});
  std::cout << "wrote " << w.samples.size() << " samples over " << w.graph.gene_count() << " genes to " << out.string()
            << '\n';
  return 0;
}

int cmd_gradcheck(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(1);
  double worst = 0.0;
  for (std::size_t k = 0; k < o.fixtures; ++k) {
    const idsp::GradCheckReport r = idsp::fixture_grad_check(idsp::derive_seed(seed, k), o.tol);
    worst = std::max(worst, r.max_rel_error);
    std::cout << "fixture " << k << " max_rel_error " << std::setprecision(3) << r.max_rel_error
              << (r.passed() ? " ok" : " FAIL") << '\n';
  }
  if (!o.out.empty()) {
    const fs::path out = ensure_out(o.out);
    write_json(out / "gradcheck.json", {{"fixtures", o.fixtures}, {"tol", o.tol}, {"max_rel_error", worst}});
    write_run_record(out, "gradcheck", {{"seed", seed}, {"tol", o.tol}, {"fixtures", o.fixtures}}, {{"seed", seed}}, {});
  }
  return worst <= o.tol ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IDSP: interpretable drug-synergy prediction on signaling networks"};
  app.require_subcommand(1);
  Options o;

  auto* validate = app.add_subcommand("validate", "Ingest a data directory and report counts");
  validate->add_option("--data-dir", o.data_dir, "Directory with the six input CSV files")->required();
  validate->add_flag("--impute-missing", o.impute, "Fill missing profile entries with 0");
  validate->add_option("--out", o.out, "Write ingest_report.json and run records here");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--config", o.config, "JSON run configuration");
  train->add_option("--data-dir", o.data_dir, "Data directory (overrides the config)");
  train->add_option("--seed", o.seed, "Seed for initialization, splits and batching");
  train->add_option("--inductive-fraction", o.inductive_fraction, "Fraction of genes held out in the inductive setting");
  train->add_option("--holdout-mode", o.holdout_mode, "by_gene or by_pathway");
  train->add_option("--setting", o.setting, "transductive or inductive");
  train->add_flag("--inductive", o.inductive, "Shorthand for --setting inductive");
  train->add_option("--epochs", o.epochs, "Maximum epochs");
  train->add_option("--lr", o.lr, "Adam learning rate");
  train->add_option("--threads", o.threads, "Worker threads for per-sample gradients");
  train->add_flag("--impute-missing", o.impute, "Fill missing profile entries with 0");
  train->add_option("--out", o.out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  eval->add_option("--data-dir", o.data_dir, "Data directory (default: the one used for training)");
  eval->add_flag("--inductive", o.inductive, "Evaluate on the full network, held-out genes included");
  eval->add_option("--split", o.split, "test (samples recorded in the checkpoint) or all");
  eval->add_option("--threads", o.threads, "Accepted for symmetry with train; evaluation is sequential");
  eval->add_option("--out", o.out, "Output directory")->required();

  auto* predict = app.add_subcommand("predict", "Predict one drug pair on one cell line");
  predict->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  predict->add_option("--data-dir", o.data_dir, "Data directory (default: the one used for training)");
  predict->add_option("--pair", o.pair, "DRUG_A,DRUG_B")->required();
  predict->add_option("--cell", o.cell, "Cell line id")->required();
  predict->add_option("--out", o.out, "Also write prediction.json here");

  auto* explain = app.add_subcommand("explain", "Export the salient subgraph of one sample");
  explain->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required();
  explain->add_option("--data-dir", o.data_dir, "Data directory (default: the one used for training)");
  explain->add_option("--pair", o.pair, "DRUG_A,DRUG_B")->required();
  explain->add_option("--cell", o.cell, "Cell line id")->required();
  explain->add_option("--tau", o.tau, "Keep edges with importance strictly above tau");
  explain->add_option("--compare-cell", o.compare_cell, "Second cell line for a centrality comparison");
  explain->add_option("--top-k", o.top_k, "Genes per side in the comparison");
  explain->add_option("--out", o.out, "Output directory")->required();

  auto* screen = app.add_subcommand("screen", "Welch t-test screen of single genes");
  screen->add_option("--data-dir", o.data_dir, "Data directory")->required();
  screen->add_option("--mode", o.mode, "target or twohop");
  screen->add_option("--alpha", o.alpha, "Significance level");
  screen->add_flag("--impute-missing", o.impute, "Fill missing profile entries with 0");
  screen->add_option("--out", o.out, "Output directory")->required();

  auto* gen = app.add_subcommand("gen", "Generate a synthetic world with a planted mechanism");
  gen->add_option("--preset", o.preset, "desk or tiny");
  gen->add_option("--seed", o.seed, "Generator seed");
  gen->add_option("--genes", o.n_genes, "Number of genes");
  gen->add_option("--pathways", o.n_pathways, "Number of pathways");
  gen->add_option("--drugs", o.n_drugs, "Number of drugs");
  gen->add_option("--cells", o.n_cells, "Number of cell lines");
  gen->add_option("--samples", o.n_samples, "Number of samples");
  gen->add_option("--planted-fraction", o.planted_fraction, "Planted share of edges per cell line");
  gen->add_option("--noise-sd", o.noise_sd, "Absolute score noise sd");
  gen->add_option("--relative-noise", o.relative_noise, "Score noise sd as a multiple of the noiseless score sd");
  gen->add_option("--out", o.out, "Output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the model gradient");
  gradcheck->add_option("--seed", o.seed, "Fixture seed");
  gradcheck->add_option("--tol", o.tol, "Maximum relative error");
  gradcheck->add_option("--fixtures", o.fixtures, "Number of random fixtures");
  gradcheck->add_option("--out", o.out, "Write gradcheck.json and run records here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o);
    if (*explain) return cmd_explain(o);
    if (*screen) return cmd_screen(o);
    if (*gen) return cmd_gen(o);
    if (*gradcheck) return cmd_gradcheck(o);
  } catch (const idsp::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const idsp::DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const idsp::ShapeError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const idsp::NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
