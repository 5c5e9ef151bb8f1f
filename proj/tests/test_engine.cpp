#include <gtest/gtest.h>

#include <map>
#include <set>

#include "support.hpp"

using namespace falcon;

namespace {

RunConfig small_config(std::uint64_t seed = 1) {
  RunConfig c;
  c.budget = 60;
  c.batch = 5;
  c.seed = seed;
  c.training.epochs = 50;
  return c;
}

}  // namespace

TEST(Engine, LambdaZeroIsEntropySampling) {
  const auto pool = falcon::testing::small_pool(3);
  auto cfg = small_config();
  cfg.lambda = 0.0;
  Engine e(cfg, pool);
  OracleLabeler oracle(pool);
  while (!e.finished()) {
    // Highest entropy first, ties by lower id, recomputed from the current model.
    std::vector<std::pair<double, SampleId>> scored;
    for (SampleId i : e.pool().ids(Status::unlabeled))
      scored.push_back({-entropy(e.model().predict_proba(e.pool().features(i))), i});
    std::sort(scored.begin(), scored.end());
    std::vector<SampleId> expect;
    for (std::size_t k = 0; k < cfg.batch; ++k) expect.push_back(scored[k].second);
    const auto& q = e.query();
    EXPECT_EQ(q.branch, Branch::accuracy);
    EXPECT_EQ(q.ids, expect);
    e.submit(oracle(q.ids));
  }
  EXPECT_EQ(e.trace().summary.fairness_steps, 0u);
  EXPECT_EQ(e.trace().summary.postponed_total, 0u);
}

TEST(Engine, LambdaOneSingleBatchIsOneFairnessStep) {
  const auto pool = falcon::testing::small_pool(4);
  auto cfg = small_config();
  cfg.budget = cfg.batch = 10;
  const auto t = simulate(cfg, pool);
  ASSERT_EQ(t.records.size(), 1u);
  EXPECT_EQ(t.records[0].branch, Branch::fairness);
  EXPECT_EQ(t.summary.fairness_steps, 1u);
  EXPECT_EQ(t.summary.trainings, 2u);
}

TEST(Engine, DeterministicPerSeed) {
  const auto pool = falcon::testing::small_pool(5);
  auto cfg = small_config(9);
  cfg.lambda = 0.5;
  const auto a = simulate(cfg, pool), b = simulate(cfg, pool);
  EXPECT_EQ(a.jsonl(), b.jsonl());
  EXPECT_EQ(trace_digest(a), trace_digest(b));
  cfg.seed = 10;
  EXPECT_NE(trace_digest(simulate(cfg, pool)), trace_digest(a));
}

TEST(Engine, OneTrainingPerIteration) {
  const auto pool = falcon::testing::small_pool(6);
  for (double lambda : {0.0, 0.5, 1.0}) {
    auto cfg = small_config();
    cfg.lambda = lambda;
    Engine e(cfg, pool);
    OracleLabeler oracle(pool);
    EXPECT_EQ(e.trainings(), 1u);
    std::size_t steps = 0;
    while (!e.finished()) {
      e.submit(oracle(e.query().ids));
      EXPECT_EQ(e.trainings(), ++steps + 1);
    }
    EXPECT_EQ(e.trace().summary.trainings, cfg.iterations() + 1);
  }
}

TEST(Engine, RewardIsValidationFairnessDelta) {
  const auto pool = falcon::testing::small_pool(7);
  auto cfg = small_config(2);
  Engine e(cfg, pool);
  OracleLabeler oracle(pool);
  double before = falcon::testing::recompute_fairness(cfg.metric, e.model(), e.pool(), Status::validation);
  EXPECT_NEAR(before, e.validation_report().score, 1e-12);
  while (!e.finished()) {
    const auto rec = e.submit(oracle(e.query().ids));
    const double after = falcon::testing::recompute_fairness(cfg.metric, e.model(), e.pool(), Status::validation);
    EXPECT_NEAR(rec.val_fairness, after, 1e-12);
    EXPECT_NEAR(rec.val_fairness_before, before, 1e-12);
    ASSERT_TRUE(rec.raw_reward);
    EXPECT_NEAR(*rec.raw_reward, after - before, 1e-12);
    ASSERT_TRUE(rec.reward);
    EXPECT_GE(*rec.reward, 0.0);
    EXPECT_LE(*rec.reward, 1.0);
    before = after;
  }
}

TEST(Engine, PostponesOnlyUndesiredLabels) {
  const auto pool = falcon::testing::small_pool(8);
  const auto truth = pool.oracle_labels();
  const auto t = simulate(small_config(3), pool);
  std::size_t postponed = 0;
  for (const auto& r : t.records) {
    if (r.branch != Branch::fairness) continue;
    for (SampleId id : r.postponed) {
      const TargetGroup g{*truth[id], pool.group(id)};
      EXPECT_EQ(std::find(r.targets.begin(), r.targets.end(), g), r.targets.end());
    }
    for (SampleId id : r.accepted) {
      const TargetGroup g{*truth[id], pool.group(id)};
      EXPECT_NE(std::find(r.targets.begin(), r.targets.end(), g), r.targets.end());
    }
    postponed += r.postponed.size();
  }
  EXPECT_EQ(t.summary.postponed_total, postponed);
}

TEST(Engine, NoPostponementForPpAndEer) {
  const auto pool = falcon::testing::small_pool(9);
  for (auto m : {FairnessMetric::PP, FairnessMetric::EER}) {
    auto cfg = small_config(4);
    cfg.metric = m;
    const auto t = simulate(cfg, pool);
    EXPECT_EQ(t.summary.postponed_total, 0u) << to_string(m);
    EXPECT_EQ(t.summary.fairness_steps, t.records.size());
  }
}

TEST(Engine, BudgetIsConservedAndEachSampleChargedOnce) {
  const auto pool = falcon::testing::small_pool(10);
  auto cfg = small_config(5);
  cfg.lambda = 0.6;
  Engine e(cfg, pool);
  OracleLabeler oracle(pool);
  while (!e.finished()) e.submit(oracle(e.query().ids));
  std::multiset<SampleId> seen;
  std::size_t recalled = 0;
  for (const auto& r : e.trace().records) {
    seen.insert(r.ids.begin(), r.ids.end());
    EXPECT_EQ(r.accepted.size() + r.postponed.size(), r.ids.size());
    recalled += r.recalled.size();
    for (SampleId id : r.ids) EXPECT_EQ(pool.status(id), Status::unlabeled);
  }
  EXPECT_EQ(seen.size(), cfg.budget);
  EXPECT_EQ(std::set<SampleId>(seen.begin(), seen.end()).size(), cfg.budget);
  EXPECT_EQ(e.labels_charged(), cfg.budget);
  // Recalls move postponed samples without charging new labels.
  const auto& s = e.trace().summary;
  EXPECT_EQ(s.postponed_now + recalled, s.postponed_total);
  EXPECT_EQ(e.pool().count(Status::train), pool.count(Status::train) + cfg.budget - s.postponed_now);
  EXPECT_EQ(s.recalled_total, recalled);
}

TEST(Engine, FallsBackWhenTargetGroupIsExhausted) {
  // Only group 1 has unlabeled samples, so group-0 targets cannot be served.
  auto pool = falcon::testing::small_pool(11);
  for (SampleId i : pool.ids(Status::unlabeled))
    if (pool.group(i) == 0) pool.set_status(i, Status::test);
  auto cfg = small_config(6);
  cfg.budget = 40;
  const auto t = simulate(cfg, pool);
  EXPECT_EQ(t.summary.labels_charged, 40u);
  for (const auto& r : t.records)
    for (SampleId id : r.ids) EXPECT_EQ(pool.group(id), 1);
}

TEST(Engine, StopsWhenUnlabeledPoolRunsOut) {
  auto pool = falcon::testing::small_pool(12, 10);
  auto cfg = small_config(7);
  cfg.budget = 1000;
  cfg.batch = 10;
  const auto t = simulate(cfg, pool);
  EXPECT_EQ(t.summary.labels_charged, pool.count(Status::unlabeled));
  EXPECT_LT(t.records.size(), cfg.iterations());
}

TEST(Engine, ValidatesConfig) {
  const auto pool = falcon::testing::small_pool(13);
  auto bad = small_config();
  bad.batch = 7;
  EXPECT_THROW(Engine(bad, pool), ConfigError);
  bad = small_config();
  bad.lambda = 1.5;
  EXPECT_THROW(Engine(bad, pool), ConfigError);
  bad = small_config();
  bad.policy_grid = {0.5, 1.0};
  EXPECT_THROW(Engine(bad, pool), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"metric": "XY"})")), ConfigError);
  EXPECT_THROW(run_config_from_json(json::parse(R"({"budget": "many"})")), ConfigError);
  SamplePool unsplit = pool;
  for (SampleId i = 0; i < unsplit.size(); ++i)
    if (unsplit.status(i) == Status::train) unsplit.set_status(i, Status::unlabeled);
  EXPECT_THROW(Engine(small_config(), unsplit), DataError);
}

TEST(Engine, ConfigJsonRoundTrip) {
  auto cfg = small_config(8);
  cfg.metric = FairnessMetric::ED;
  cfg.single_policy = 0.4;
  cfg.ablation.no_propagation = true;
  cfg.bandit = BanditVariant::exp3_ix;
  const auto back = run_config_from_json(to_json(cfg));
  EXPECT_EQ(to_json(back).dump(), to_json(cfg).dump());
}

TEST(Engine, AblationsChangeTheRightPieces) {
  const auto pool = falcon::testing::small_pool(14);
  auto cfg = small_config(9);
  cfg.ablation.no_trial_and_error = true;
  auto t = simulate(cfg, pool);
  EXPECT_EQ(t.summary.postponed_total, 0u);
  for (const auto& r : t.records) EXPECT_TRUE(r.recalled.empty());

  cfg = small_config(9);
  cfg.ablation.no_mab = true;
  t = simulate(cfg, pool);
  for (const auto& r : t.records) {
    EXPECT_TRUE(r.bandit.is_null());
    EXPECT_TRUE(r.arm.has_value());
  }

  cfg = small_config(9);
  cfg.single_policy = 0.5;
  t = simulate(cfg, pool);
  for (const auto& r : t.records) {
    ASSERT_TRUE(r.policy);
    EXPECT_DOUBLE_EQ(r.policy->r, 0.5);
    EXPECT_FALSE(r.arm.has_value());
  }

  cfg = small_config(9);
  cfg.ablation.no_propagation = true;
  t = simulate(cfg, pool);
  // Without propagation only the drawn arm's weight can move.
  std::map<std::vector<int>, std::vector<double>> last;
  std::size_t updates = 0;
  for (const auto& r : t.records) {
    if (r.bandit.is_null()) continue;
    const auto key = r.bandit.at("pair").get<std::vector<int>>();
    const auto w = r.bandit.at("weights").get<std::vector<double>>();
    auto prev = last.try_emplace(key, std::vector<double>(w.size(), 1.0)).first->second;
    for (std::size_t a = 0; a < w.size(); ++a)
      if (a != *r.arm) EXPECT_EQ(w[a], prev[a]);
    updates += w[*r.arm] != prev[*r.arm];
    last[key] = w;
  }
  EXPECT_GT(updates, 0u);
}

TEST(Engine, HiddenLabelsAreNotRead) {
  // A pool whose unlabeled samples carry no labels at all still runs when the
  // labeler supplies them.
  const auto full = falcon::testing::small_pool(15);
  SamplePool hidden({"a", "b", "c"}, 2);
  for (SampleId i = 0; i < full.size(); ++i) {
    const auto f = full.features(i);
    const auto s = full.status(i);
    hidden.add(std::vector<double>(f.begin(), f.end()), full.group(i),
               s == Status::unlabeled ? std::nullopt : full.oracle_labels()[i], s);
  }
  OracleLabeler oracle(full);
  const auto a = run(small_config(10), hidden, std::cref(oracle));
  const auto b = simulate(small_config(10), full);
  EXPECT_EQ(a.jsonl(), b.jsonl());
}

TEST(Matrix, SingleEntryMatchesRun) {
  const auto cfg = small_config(11);
  const PoolProvider provider = [](std::uint64_t seed) { return falcon::testing::small_pool(seed); };
  const auto runs = run_matrix({{"one", cfg}}, provider);
  ASSERT_EQ(runs.size(), 1u);
  const auto direct = simulate(cfg, falcon::testing::small_pool(11));
  EXPECT_EQ(to_json(runs[0].summary).dump(), to_json(direct.summary).dump());
}

TEST(Matrix, ParallelMatchesSerialAndSummaryMath) {
  std::vector<MatrixEntry> entries;
  for (std::uint64_t s = 1; s <= 4; ++s) entries.push_back({"a", small_config(s)});
  for (std::uint64_t s = 1; s <= 2; ++s) {
    auto c = small_config(s);
    c.lambda = 0.0;
    entries.push_back({"b", c});
  }
  const PoolProvider provider = [](std::uint64_t seed) { return falcon::testing::small_pool(seed); };
  const auto serial = run_matrix(entries, provider, 1);
  const auto parallel = run_matrix(entries, provider, 3);
  for (std::size_t k = 0; k < entries.size(); ++k)
    EXPECT_EQ(to_json(serial[k].summary).dump(), to_json(parallel[k].summary).dump());
  const auto rows = summarize(serial);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].config_id, "a");
  EXPECT_EQ(rows[0].runs, 4u);
  double mean = 0;
  for (std::size_t k = 0; k < 4; ++k) mean += *serial[k].summary.final_state.test_fairness;
  EXPECT_NEAR(rows[0].fairness_mean, mean / 4, 1e-12);
  EXPECT_DOUBLE_EQ(rows[1].lambda, 0.0);
  EXPECT_THROW(run_matrix({}, provider), ConfigError);
}
