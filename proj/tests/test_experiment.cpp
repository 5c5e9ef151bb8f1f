#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace falcon;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("falcon_experiment_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Dataset, PresetLoadsAndReseeds) {
  const auto src = falcon::testing::biased_preset();
  ASSERT_TRUE(src.synth);
  EXPECT_TRUE(src.reseed);
  const auto a = src.pool_for(1), b = src.pool_for(1), c = src.pool_for(2);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == c);
  EXPECT_GT(a.count(Status::train), 0u);
  EXPECT_GT(a.count(Status::validation), 0u);
}

TEST(Dataset, BareSynthSpecIsAccepted) {
  const auto j = json::parse(R"({"dim": 1, "seed": 3, "subgroups": [
      {"y": 0, "z": 0, "count": 40, "mean": [-1]}, {"y": 1, "z": 1, "count": 40, "mean": [1]}]})");
  const auto src = dataset_from_json(j);
  ASSERT_TRUE(src.synth);
  EXPECT_EQ(src.pool_for(0).size(), 80u);
}

TEST(Dataset, CsvWithSplitColumnIsUsedAsIs) {
  const auto dir = temp_dir("csv");
  const auto pool = falcon::testing::small_pool(4);
  {
    std::ofstream out(dir / "pool.csv");
    write_csv(out, pool, true);
  }
  const auto src = dataset_from_json(json::parse(R"({"csv": "pool.csv"})"), dir);
  const auto back = src.pool_for(7);
  ASSERT_EQ(back.size(), pool.size());
  for (SampleId i = 0; i < pool.size(); ++i) {
    EXPECT_EQ(back.status(i), pool.status(i));
    EXPECT_EQ(back.group(i), pool.group(i));
  }
}

TEST(Dataset, Errors) {
  EXPECT_THROW(dataset_from_json(json::parse("[]")), ConfigError);
  EXPECT_THROW(dataset_from_json(json::parse("{}")), ConfigError);
  EXPECT_THROW(dataset_from_json(json::parse(R"({"synth": "missing.json"})")), ConfigError);
  EXPECT_THROW(dataset_from_json(json::parse(R"({"split": {"train": "x"}, "csv": "a.csv"})")), ConfigError);
  EXPECT_THROW(load_dataset("/nonexistent/dataset.json"), ConfigError);
}

TEST(Matrix, LambdaGridTimesSeeds) {
  const auto j = read_json_file(std::string(FALCON_CONFIG_DIR) + "/matrix_lambda.json");
  const auto base = run_config_from_json(j.at("run"));
  const auto plan = matrix_from_json(j, base);
  EXPECT_EQ(plan.entries.size(), 110u);
  std::set<std::string> ids;
  std::set<double> lambdas;
  for (const auto& e : plan.entries) {
    ids.insert(e.config_id);
    lambdas.insert(e.config.lambda);
  }
  EXPECT_EQ(ids.size(), 11u);
  EXPECT_EQ(lambdas.size(), 11u);
  EXPECT_EQ(plan.entries[0].config.seed, base.seed);
  EXPECT_EQ(plan.entries[9].config.seed, base.seed + 9);
}

TEST(Matrix, AblationPlanIsCumulative) {
  const auto j = read_json_file(std::string(FALCON_CONFIG_DIR) + "/matrix_ablation.json");
  const auto plan = matrix_from_json(j, run_config_from_json(j.at("run")));
  std::map<std::string, RunConfig> by_id;
  for (const auto& e : plan.entries) by_id.emplace(e.config_id, e.config);
  ASSERT_EQ(by_id.size(), 7u);
  EXPECT_FALSE(by_id.at("falcon").ablation.no_propagation);
  EXPECT_TRUE(by_id.at("no_propagation").ablation.no_propagation);
  EXPECT_TRUE(by_id.at("no_normalization").ablation.no_propagation);
  EXPECT_TRUE(by_id.at("no_mab").ablation.no_normalization);
  EXPECT_EQ(by_id.at("no_mab").policy_grid, (std::vector<double>{0.5}));
  EXPECT_TRUE(by_id.at("no_trial_and_error").ablation.no_mab);
  EXPECT_EQ(by_id.at("random").accuracy_strategy, AccuracyStrategy::random);
  EXPECT_DOUBLE_EQ(by_id.at("entropy").lambda, 0.0);
}

TEST(Matrix, GridsAndExplicitSeeds) {
  const auto j = json::parse(R"({"seeds": [5, 9], "metric_grid": ["EO", "PP"], "lambda_grid": [0, 1],
                                 "configs": [{"id": "x"}, {"id": "y", "gamma": 0.5}]})");
  const auto plan = matrix_from_json(j, RunConfig{});
  EXPECT_EQ(plan.entries.size(), 2u * 2 * 2 * 2);
  EXPECT_EQ(plan.entries[0].config_id, "x/metric=eo/lambda=0");
  EXPECT_EQ(plan.entries[0].config.seed, 5u);
  EXPECT_EQ(plan.entries[1].config.seed, 9u);
  EXPECT_EQ(plan.entries.back().config_id, "y/metric=pp/lambda=1");
  EXPECT_DOUBLE_EQ(plan.entries.back().config.gamma, 0.5);
  EXPECT_THROW(matrix_from_json(json::parse(R"({"seeds": []})"), RunConfig{}), ConfigError);
  EXPECT_THROW(matrix_from_json(json::parse(R"({"configs": [{"gamma": 0.5}]})"), RunConfig{}), ConfigError);
  EXPECT_THROW(matrix_from_json(json::parse(R"({"lambda_grid": [2]})"), RunConfig{}), ConfigError);
}
