#include <gtest/gtest.h>

#include "idsp/config.hpp"
#include "test_util.hpp"

using namespace idsp;
using idsp::test::TempDir;
using idsp::test::write_file;

TEST(Config, DefaultsSurviveEmptyObject) {
  RunConfig c;
  apply_config(c, nlohmann::json::object());
  EXPECT_EQ(c.train.epochs, 300u);
  EXPECT_EQ(c.train.batch_size, 64u);
  EXPECT_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.model.layers, 3u);
  EXPECT_EQ(c.model.d_hidden, 32u);
  EXPECT_EQ(c.train.holdout_mode, HoldoutMode::ByPathway);
  EXPECT_EQ(c.train.inductive_fraction, 0.1);
}

TEST(Config, LaterLayersOverrideEarlier) {
  RunConfig c;
  apply_config(c, {{"epochs", 10}, {"lr", 0.5}, {"layers", 2}});
  apply_config(c, {{"epochs", 20}});
  EXPECT_EQ(c.train.epochs, 20u);
  EXPECT_EQ(c.train.lr, 0.5);
  EXPECT_EQ(c.model.layers, 2u);
}

TEST(Config, SeedSetsModelAndTraining) {
  RunConfig c;
  apply_config(c, {{"seed", 77}});
  EXPECT_EQ(c.train.seed, 77u);
  EXPECT_EQ(c.model.seed, 77u);
}

TEST(Config, EnumsParsedAndValidated) {
  RunConfig c;
  apply_config(c, {{"setting", "inductive"}, {"holdout_mode", "by_gene"}});
  EXPECT_EQ(c.train.setting, Setting::Inductive);
  EXPECT_EQ(c.train.holdout_mode, HoldoutMode::ByGene);
  EXPECT_THROW(apply_config(c, {{"setting", "semi"}}), UsageError);
}

TEST(Config, UnknownKeysAndWrongTypesRejected) {
  RunConfig c;
  try {
    apply_config(c, {{"epochs", 5}, {"learning_rate", 0.1}});
    FAIL() << "expected UsageError";
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("learning_rate"), std::string::npos);
  }
  EXPECT_EQ(c.train.epochs, 300u);  // nothing applied from a rejected object
  EXPECT_THROW(apply_config(c, {{"epochs", "many"}}), UsageError);
  EXPECT_THROW(apply_config(c, nlohmann::json::array()), UsageError);
}

TEST(Config, FileLoadResolvesDataDirAgainstConfigLocation) {
  TempDir d("cfg");
  write_file(d / "run.json", R"({"data_dir": "world", "epochs": 7})");
  const RunConfig c = load_config(d / "run.json");
  EXPECT_EQ(c.data_dir, d.path() / "world");
  EXPECT_EQ(c.train.epochs, 7u);
  write_file(d / "abs.json", R"({"data_dir": "/opt/data"})");
  EXPECT_EQ(load_config(d / "abs.json").data_dir, std::filesystem::path("/opt/data"));
  write_file(d / "bad.json", "{epochs: 3}");
  EXPECT_THROW(load_config(d / "bad.json"), UsageError);
  EXPECT_THROW(load_config(d / "missing.json"), UsageError);
}

TEST(Config, ResolvedJsonRoundTrips) {
  RunConfig c;
  apply_config(c, {{"data_dir", "/x"}, {"epochs", 9}, {"setting", "inductive"}, {"d_hidden", 12}, {"zscore", false}});
  const nlohmann::json j = to_json(c);
  for (const auto& [k, _] : j.items()) EXPECT_TRUE(config_keys().contains(k)) << k;
  RunConfig back;
  apply_config(back, j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.model.d_hidden, 12u);
  EXPECT_FALSE(back.train.zscore);
}
