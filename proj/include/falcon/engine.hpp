#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"

#include "falcon/bandit.hpp"
#include "falcon/data.hpp"
#include "falcon/error.hpp"
#include "falcon/fairness.hpp"
#include "falcon/log.hpp"
#include "falcon/model.hpp"
#include "falcon/policy.hpp"
#include "falcon/random.hpp"

namespace falcon {

enum class AccuracyStrategy { entropy, random };

constexpr std::string_view to_string(AccuracyStrategy s) {
  return s == AccuracyStrategy::entropy ? "entropy" : "random";
}

inline AccuracyStrategy parse_accuracy_strategy(std::string_view s) {
  if (s == "entropy") return AccuracyStrategy::entropy;
  if (s == "random") return AccuracyStrategy::random;
  throw ConfigError("unknown accuracy strategy: " + std::string(s));
}

enum class Branch { fairness, accuracy };

constexpr std::string_view to_string(Branch b) { return b == Branch::fairness ? "fair" : "accuracy"; }

struct Ablation {
  bool no_mab = false;              // uniform random arm instead of the bandit
  bool no_propagation = false;      // neighbors receive no reward
  bool no_normalization = false;    // rewards are clip(raw, 0, 1) throughout
  bool no_trial_and_error = false;  // every acquired label goes to train
  bool operator==(const Ablation&) const = default;
};

struct RunConfig {
  FairnessMetric metric = FairnessMetric::DP;
  double lambda = 1.0;
  std::size_t budget = 400;
  std::size_t batch = 10;
  std::vector<double> policy_grid = kDefaultPolicyGrid;
  double gamma = 0.3;
  std::size_t calibration_steps = 10;
  std::uint64_t seed = 0;
  AccuracyStrategy accuracy_strategy = AccuracyStrategy::entropy;
  BanditVariant bandit = BanditVariant::exp3;
  NeighborWeighting neighbor_weighting = NeighborWeighting::own_probability;
  // Fixed risk level with a uniformly random target per step (no bandit).
  std::optional<double> single_policy;
  Ablation ablation;
  TrainingConfig training;

  void validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (batch == 0) throw ConfigError("batch must be >= 1");
    if (budget % batch != 0) throw ConfigError("batch must divide the budget");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    PolicySet(1, policy_grid);  // validates the grid
    if (single_policy) validate_risk(*single_policy);
  }

  std::size_t iterations() const { return budget / batch; }
};

inline json to_json(const RunConfig& c) {
  return {{"metric", to_string(c.metric)},
          {"lambda", c.lambda},
          {"budget", c.budget},
          {"batch", c.batch},
          {"policy_grid", c.policy_grid},
          {"gamma", c.gamma},
          {"calibration_steps", c.calibration_steps},
          {"seed", c.seed},
          {"accuracy_strategy", to_string(c.accuracy_strategy)},
          {"bandit", to_string(c.bandit)},
          {"neighbor_weighting", to_string(c.neighbor_weighting)},
          {"single_policy", c.single_policy ? json(*c.single_policy) : json(nullptr)},
          {"ablation",
           {{"no_mab", c.ablation.no_mab},
            {"no_propagation", c.ablation.no_propagation},
            {"no_normalization", c.ablation.no_normalization},
            {"no_trial_and_error", c.ablation.no_trial_and_error}}},
          {"training", to_json(c.training)}};
}

// Missing keys keep the values already in `base`.
inline RunConfig run_config_from_json(const json& j, RunConfig base = {}) {
  RunConfig c = std::move(base);
  try {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    if (j.contains("metric")) c.metric = parse_metric(j.at("metric").get<std::string>());
    c.lambda = j.value("lambda", c.lambda);
    c.budget = j.value("budget", c.budget);
    c.batch = j.value("batch", c.batch);
    if (j.contains("policy_grid")) c.policy_grid = j.at("policy_grid").get<std::vector<double>>();
    c.gamma = j.value("gamma", c.gamma);
    c.calibration_steps = j.value("calibration_steps", c.calibration_steps);
    c.seed = j.value("seed", c.seed);
    if (j.contains("accuracy_strategy"))
      c.accuracy_strategy = parse_accuracy_strategy(j.at("accuracy_strategy").get<std::string>());
    if (j.contains("bandit")) c.bandit = parse_bandit_variant(j.at("bandit").get<std::string>());
    if (j.contains("neighbor_weighting"))
      c.neighbor_weighting = parse_neighbor_weighting(j.at("neighbor_weighting").get<std::string>());
    if (j.contains("single_policy")) {
      const auto& sp = j.at("single_policy");
      c.single_policy = sp.is_null() ? std::nullopt : std::optional<double>(sp.get<double>());
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      c.ablation.no_mab = a.value("no_mab", c.ablation.no_mab);
      c.ablation.no_propagation = a.value("no_propagation", c.ablation.no_propagation);
      c.ablation.no_normalization = a.value("no_normalization", c.ablation.no_normalization);
      c.ablation.no_trial_and_error = a.value("no_trial_and_error", c.ablation.no_trial_and_error);
    }
    if (j.contains("training")) c.training = training_config_from_json(j.at("training"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  c.validate();
  return c;
}

// Returns one label per requested id.
using Labeler = std::function<std::vector<int>(std::span<const SampleId>)>;

// Answers from the ground truth held in a pool.
class OracleLabeler {
 public:
  explicit OracleLabeler(const SamplePool& pool) : truth_(pool.oracle_labels()) {}
  std::vector<int> operator()(std::span<const SampleId> ids) const {
    std::vector<int> out;
    out.reserve(ids.size());
    for (SampleId i : ids) {
      if (!truth_.at(i)) throw DataError("oracle has no label for sample " + std::to_string(i));
      out.push_back(*truth_[i]);
    }
    return out;
  }

 private:
  std::vector<std::optional<int>> truth_;
};

// A batch the engine wants labeled, with the reasoning behind it.
struct Query {
  std::size_t iteration = 0;
  Branch branch = Branch::accuracy;
  std::vector<SampleId> ids;
  std::pair<int, int> pair{0, 1};
  std::vector<TargetGroup> targets;
  std::optional<std::size_t> arm;  // set when a bandit arm / grid arm chose the policy
  std::optional<Policy> policy;
  bool bandit_driven = false;
  std::vector<SampleId> recalled;
  std::string note;

  std::string rationale(FairnessMetric metric) const {
    std::ostringstream s;
    if (branch == Branch::accuracy) {
      s << "Improving accuracy: most informative unlabeled samples";
    } else {
      s << "Improving " << to_string(metric) << " fairness between groups " << pair.first << " and "
        << pair.second << "; target subgroups";
      for (const auto& t : targets) s << " (y=" << t.y << ", z=" << t.z << ")";
      if (policy)
        s << "; policy r=" << format_double(policy->r) << " picks group " << policy->target.z
          << " samples whose predicted probability of label " << policy->target.y << " is closest to "
          << format_double(policy->aim());
    }
    if (!note.empty()) s << " [" << note << "]";
    return s.str();
  }
};

struct StepRecord {
  std::size_t iteration = 0;
  Branch branch = Branch::accuracy;
  std::pair<int, int> pair{0, 1};
  std::vector<TargetGroup> targets;
  std::optional<std::size_t> arm;
  std::optional<Policy> policy;
  std::vector<SampleId> ids;
  std::vector<SampleId> accepted;
  std::vector<SampleId> postponed;
  std::vector<SampleId> recalled;
  std::optional<double> raw_reward;
  std::optional<double> reward;
  double val_fairness_before = 0.0;
  double val_fairness = 0.0;
  std::optional<double> test_fairness;
  std::optional<double> test_accuracy;
  json bandit;  // snapshot of the bandit used (null if none)
  std::string note;
};

namespace detail {
inline json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
}  // namespace detail

inline json to_json(const StepRecord& r) {
  json targets = json::array();
  for (const auto& t : r.targets) targets.push_back(to_json(t));
  json policy = nullptr;
  if (r.policy) policy = {{"y", r.policy->target.y}, {"z", r.policy->target.z}, {"r", r.policy->r}};
  return {{"iteration", r.iteration},
          {"branch", to_string(r.branch)},
          {"pair", {r.pair.first, r.pair.second}},
          {"targets", targets},
          {"arm", r.arm ? json(*r.arm) : json(nullptr)},
          {"policy", policy},
          {"ids", r.ids},
          {"accepted", r.accepted},
          {"postponed", r.postponed},
          {"recalled", r.recalled},
          {"raw_reward", detail::opt(r.raw_reward)},
          {"reward", detail::opt(r.reward)},
          {"val_fairness_before", r.val_fairness_before},
          {"val_fairness", r.val_fairness},
          {"test_fairness", detail::opt(r.test_fairness)},
          {"test_accuracy", detail::opt(r.test_accuracy)},
          {"bandit", r.bandit},
          {"note", r.note}};
}

struct Snapshot {
  double val_fairness = 0.0;
  std::optional<double> test_fairness;
  std::optional<double> test_accuracy;
};

struct RunSummary {
  Snapshot initial;
  Snapshot final_state;
  std::size_t iterations = 0;
  std::size_t labels_charged = 0;
  std::size_t postponed_total = 0;  // labels ever postponed
  std::size_t postponed_now = 0;    // still postponed at the end
  std::size_t recalled_total = 0;
  std::size_t fairness_steps = 0;
  std::size_t trainings = 0;
};

inline json to_json(const Snapshot& s) {
  return {{"val_fairness", s.val_fairness},
          {"test_fairness", detail::opt(s.test_fairness)},
          {"test_accuracy", detail::opt(s.test_accuracy)}};
}

inline json to_json(const RunSummary& s) {
  return {{"initial", to_json(s.initial)},
          {"final", to_json(s.final_state)},
          {"iterations", s.iterations},
          {"labels_charged", s.labels_charged},
          {"postponed_total", s.postponed_total},
          {"postponed_now", s.postponed_now},
          {"recalled_total", s.recalled_total},
          {"fairness_steps", s.fairness_steps},
          {"trainings", s.trainings}};
}

struct RunTrace {
  RunConfig config;
  std::vector<StepRecord> records;
  RunSummary summary;

  // One JSON object per line, in iteration order.
  std::string jsonl() const {
    std::string out;
    for (const auto& r : records) {
      out += to_json(r).dump();
      out += '\n';
    }
    return out;
  }

  json summary_json() const { return {{"config", to_json(config)}, {"summary", to_json(summary)}}; }
};

// FNV-1a over the serialized records and summary.
inline std::uint64_t trace_digest(const RunTrace& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto feed = [&h](const std::string& s) {
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
  };
  feed(t.jsonl());
  feed(t.summary_json().dump());
  return h;
}

// Steppable fair active-learning loop. Each iteration is split into query()
// (choose the batch) and submit() (consume labels, retrain once, score the
// step, update the bandit), so the same code serves simulated and human
// labelers.
class Engine {
 public:
  Engine(RunConfig config, SamplePool pool)
      : config_(std::move(config)),
        pool_(std::move(pool)),
        policies_(target_count(config_.metric), config_.policy_grid),
        calibration_(config_.calibration_steps),
        blend_rng_(config_.seed, "blend"),
        select_rng_(config_.seed, "select"),
        bandit_rng_(config_.seed, "bandit") {
    config_.validate();
    if (pool_.count(Status::train) == 0) throw DataError("pool has no train samples; split it first");
    if (pool_.count(Status::validation) == 0) throw DataError("pool has no validation samples");
    if (config_.budget > pool_.count(Status::unlabeled))
      log::warn("budget {} exceeds {} unlabeled samples; the run will stop early", config_.budget,
                pool_.count(Status::unlabeled));
    retrain();
    trace_.config = config_;
    trace_.summary.initial = snapshot();
    trace_.summary.final_state = trace_.summary.initial;
    trace_.summary.trainings = trainings_;
    trajectory_.push_back(val_report_.score);
  }

  const RunConfig& config() const { return config_; }
  const SamplePool& pool() const { return pool_; }
  const Classifier& model() const { return model_; }
  const FairnessReport& validation_report() const { return val_report_; }
  const RunTrace& trace() const { return trace_; }
  std::size_t trainings() const { return trainings_; }
  std::size_t labels_charged() const { return charged_; }
  std::size_t budget_remaining() const { return config_.budget - std::min(config_.budget, charged_); }
  const std::vector<double>& trajectory() const { return trajectory_; }
  const PolicySet& policies() const { return policies_; }
  const RewardCalibration& calibration() const { return calibration_; }

  bool finished() const {
    if (pending_) return false;
    return exhausted_ || charged_ >= config_.budget || trace_.records.size() >= config_.iterations() ||
           pool_.count(Status::unlabeled) == 0;
  }

  bool has_pending() const { return pending_.has_value(); }
  const Query* query_if_pending() const { return pending_ ? &*pending_ : nullptr; }

  // Plans the next batch if none is pending. Throws once finished.
  const Query& query() {
    if (!pending_) {
      if (finished()) throw std::logic_error("run is finished");
      plan();
      if (!pending_) throw std::logic_error("run is finished");
    }
    return *pending_;
  }

  StepRecord submit(std::span<const int> labels) {
    if (!pending_) throw std::logic_error("no pending query");
    const Query q = std::move(*pending_);
    pending_.reset();
    if (labels.size() != q.ids.size()) throw std::invalid_argument("label count does not match the pending batch");

    StepRecord rec;
    rec.iteration = q.iteration;
    rec.branch = q.branch;
    rec.pair = q.pair;
    rec.targets = q.targets;
    rec.arm = q.arm;
    rec.policy = q.policy;
    rec.ids = q.ids;
    rec.recalled = q.recalled;
    rec.note = q.note;
    rec.val_fairness_before = val_report_.score;

    const bool filter = q.branch == Branch::fairness && !config_.ablation.no_trial_and_error;
    for (std::size_t k = 0; k < q.ids.size(); ++k) {
      const SampleId id = q.ids[k];
      pool_.record_label(id, labels[k]);
      if (filter && trial_filter(labels[k], pool_.group(id), q.targets) == FilterDecision::postpone) {
        pool_.set_status(id, Status::postponed);
        rec.postponed.push_back(id);
      } else {
        pool_.set_status(id, Status::train);
        rec.accepted.push_back(id);
      }
    }
    charged_ += q.ids.size();

    const double before = val_report_.score;
    retrain();
    rec.val_fairness = val_report_.score;
    const Snapshot snap = snapshot();
    rec.test_fairness = snap.test_fairness;
    rec.test_accuracy = snap.test_accuracy;

    if (q.branch == Branch::fairness) {
      const double raw = val_report_.score - before;
      rec.raw_reward = raw;
      if (q.bandit_driven) {
        const double reward = config_.ablation.no_normalization ? std::clamp(raw, 0.0, 1.0) : calibration_.normalize(raw);
        rec.reward = reward;
        std::vector<double> credited(policies_.arms(), 0.0);
        if (config_.ablation.no_propagation) credited[*q.arm] = reward;
        else credited = propagate(policies_, *q.arm, reward);
        auto& bandit = bandit_for(q.pair);
        bandit.update(*q.arm, credited, config_.neighbor_weighting);
        rec.bandit = to_json(bandit);
        rec.bandit["calibration"] = to_json(calibration_);
      } else {
        rec.reward = std::clamp(raw, 0.0, 1.0);
      }
    }

    auto& s = trace_.summary;
    s.iterations = trace_.records.size() + 1;
    s.labels_charged = charged_;
    s.postponed_total += rec.postponed.size();
    s.postponed_now = pool_.count(Status::postponed);
    s.recalled_total += rec.recalled.size();
    if (q.branch == Branch::fairness) ++s.fairness_steps;
    s.trainings = trainings_;
    s.final_state = snap;
    trajectory_.push_back(val_report_.score);
    trace_.records.push_back(rec);
    return rec;
  }

  // Bandit of the given pair, or a fresh one when the pair has not been used.
  json bandit_snapshot(std::optional<std::pair<int, int>> pair = std::nullopt) const {
    const auto key = pair.value_or(last_pair_.value_or(val_report_.pair));
    json out;
    if (auto it = bandits_.find(key); it != bandits_.end()) {
      out = to_json(it->second);
    } else if (policies_.arms() >= 2) {
      out = to_json(BanditState(policies_.arms(), config_.gamma, config_.bandit, key));
    } else {
      out = {{"pair", {key.first, key.second}}, {"weights", {1.0}}, {"probabilities", {1.0}}};
    }
    json arms = json::array();
    const auto probs = out.at("probabilities");
    for (std::size_t a = 0; a < policies_.arms(); ++a)
      arms.push_back({{"arm", a}, {"slot", policies_.slot_of(a)}, {"r", policies_.risk(a)},
                      {"probability", probs.at(a)}});
    out["arms"] = std::move(arms);
    out["calibration"] = to_json(calibration_);
    return out;
  }

 private:
  Snapshot snapshot() const {
    Snapshot s;
    s.val_fairness = val_report_.score;
    if (!test_ids_.empty() && test_labeled_) {
      const auto eval = evaluate(model_, pool_, Status::test);
      s.test_accuracy = eval.accuracy;
      try {
        s.test_fairness = fairness_score(config_.metric, compute_rates(eval));
      } catch (const UndefinedFairness&) {
      }
    }
    return s;
  }

  void retrain() {
    const auto train_ids = pool_.ids(Status::train);
    model_ = train(pool_, train_ids, config_.training, trainings_ ? &model_ : nullptr);
    ++trainings_;
    val_report_ = make_report(config_.metric, evaluate(model_, pool_, Status::validation));
    if (trainings_ == 1) {
      test_ids_ = pool_.ids(Status::test);
      test_labeled_ = std::all_of(test_ids_.begin(), test_ids_.end(), [&](SampleId i) { return pool_.has_label(i); });
    }
  }

  BanditState& bandit_for(std::pair<int, int> pair) {
    auto it = bandits_.find(pair);
    if (it == bandits_.end())
      it = bandits_.emplace(pair, BanditState(policies_.arms(), config_.gamma, config_.bandit, pair)).first;
    return it->second;
  }

  std::vector<SampleId> select_for_accuracy(std::size_t want) {
    std::vector<SampleId> pool_ids = pool_.ids(Status::unlabeled);
    want = std::min(want, pool_ids.size());
    if (config_.accuracy_strategy == AccuracyStrategy::random) {
      for (std::size_t k = 0; k < want; ++k) {
        const auto j = k + static_cast<std::size_t>(select_rng_.below(pool_ids.size() - k));
        std::swap(pool_ids[k], pool_ids[j]);
      }
      pool_ids.resize(want);
      return pool_ids;
    }
    struct Scored {
      double h;
      SampleId id;
    };
    std::vector<Scored> scored;
    scored.reserve(pool_ids.size());
    for (SampleId i : pool_ids) scored.push_back({entropy(model_.predict_proba(pool_.features(i))), i});
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(want), scored.end(),
                      [](const Scored& a, const Scored& b) { return a.h > b.h || (a.h == b.h && a.id < b.id); });
    std::vector<SampleId> out;
    for (std::size_t k = 0; k < want; ++k) out.push_back(scored[k].id);
    return out;
  }

  void plan() {
    Query q;
    q.iteration = trace_.records.size() + 1;
    const std::size_t want = std::min(config_.batch, config_.budget - charged_);
    const bool fair = blend_rng_.bernoulli(config_.lambda);

    if (fair) {
      q.branch = Branch::fairness;
      q.pair = val_report_.pair;
      q.targets = val_report_.targets;
      last_pair_ = q.pair;
      if (!config_.ablation.no_trial_and_error) q.recalled = recall_postponed(pool_, q.targets);

      if (config_.single_policy) {
        const auto slot = static_cast<std::size_t>(select_rng_.below(q.targets.size()));
        q.policy = Policy{q.targets[slot], *config_.single_policy};
      } else if (config_.ablation.no_mab || policies_.arms() < 2) {
        q.arm = static_cast<std::size_t>(select_rng_.below(policies_.arms()));
        q.policy = policies_.resolve(*q.arm, q.targets);
      } else {
        q.arm = bandit_for(q.pair).draw(bandit_rng_);
        q.policy = policies_.resolve(*q.arm, q.targets);
        q.bandit_driven = true;
      }

      q.ids = select_by_policy(*q.policy, model_, pool_, want);
      if (q.ids.empty()) {
        for (const auto& t : q.targets) {
          if (t == q.policy->target) continue;
          Policy alt{t, q.policy->r};
          q.ids = select_by_policy(alt, model_, pool_, want);
          if (!q.ids.empty()) {
            q.note = "target group z=" + std::to_string(q.policy->target.z) + " exhausted; fell back to z=" +
                     std::to_string(t.z);
            q.policy = alt;
            q.bandit_driven = false;
            break;
          }
        }
      }
      if (q.ids.empty()) {
        q.note = "target groups exhausted; fell back to the accuracy strategy";
        q.branch = Branch::accuracy;
        q.arm.reset();
        q.policy.reset();
        q.bandit_driven = false;
      }
      if (!q.note.empty()) log::info("iteration {}: {}", q.iteration, q.note);
    }

    if (q.branch == Branch::accuracy) q.ids = select_for_accuracy(want);
    if (q.ids.empty()) {
      exhausted_ = true;
      log::info("unlabeled pool exhausted after {} labels", charged_);
      return;
    }
    if (q.ids.size() < config_.batch) log::info("iteration {}: batch truncated to {}", q.iteration, q.ids.size());
    pending_ = std::move(q);
  }

  RunConfig config_;
  SamplePool pool_;
  PolicySet policies_;
  RewardCalibration calibration_;
  Rng blend_rng_;
  Rng select_rng_;
  Rng bandit_rng_;
  Classifier model_;
  FairnessReport val_report_;
  std::map<std::pair<int, int>, BanditState> bandits_;
  std::optional<std::pair<int, int>> last_pair_;
  std::optional<Query> pending_;
  std::vector<SampleId> test_ids_;
  bool test_labeled_ = false;
  std::size_t trainings_ = 0;
  std::size_t charged_ = 0;
  bool exhausted_ = false;
  RunTrace trace_;
  std::vector<double> trajectory_;
};

// Drives an engine to completion. `on_step` sees each record as soon as it
// exists, so a failing labeler still leaves a partial trace behind.
inline RunTrace run(const RunConfig& config, SamplePool pool, const Labeler& labeler,
                    const std::function<void(const StepRecord&)>& on_step = {}) {
  Engine engine(config, std::move(pool));
  while (!engine.finished()) {
    const Query& q = engine.query();
    const auto labels = labeler(q.ids);
    if (labels.size() != q.ids.size()) throw std::runtime_error("labeler returned the wrong number of labels");
    const auto rec = engine.submit(labels);
    if (on_step) on_step(rec);
  }
  return engine.trace();
}

inline RunTrace simulate(const RunConfig& config, const SamplePool& pool,
                         const std::function<void(const StepRecord&)>& on_step = {}) {
  OracleLabeler oracle(pool);
  return run(config, pool, std::cref(oracle), on_step);
}

// ---------------------------------------------------------------------------
// Experiment matrix

struct MatrixEntry {
  std::string config_id;
  RunConfig config;
};

struct MatrixRun {
  std::string config_id;
  RunConfig config;
  RunSummary summary;
  double wall_seconds = 0.0;
};

struct MatrixRow {
  std::string config_id;
  double lambda = 0.0;
  FairnessMetric metric = FairnessMetric::DP;
  std::size_t runs = 0;
  double fairness_mean = 0.0, fairness_std = 0.0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
  double original_fairness_mean = 0.0;
  double postponed_mean = 0.0;
  double wall_seconds = 0.0;
};

// Pool for a given seed (typically a seeded split of one dataset).
using PoolProvider = std::function<SamplePool(std::uint64_t seed)>;

inline std::vector<MatrixRun> run_matrix(const std::vector<MatrixEntry>& entries, const PoolProvider& pools,
                                         std::size_t jobs = 1) {
  if (entries.empty()) throw ConfigError("matrix needs at least one configuration");
  std::vector<MatrixRun> out(entries.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (std::size_t k = next++; k < entries.size(); k = next++) {
      try {
        const auto start = std::chrono::steady_clock::now();
        const auto pool = pools(entries[k].config.seed);
        const auto trace = simulate(entries[k].config, pool);
        const std::chrono::duration<double> took = std::chrono::steady_clock::now() - start;
        out[k] = MatrixRun{entries[k].config_id, entries[k].config, trace.summary, took.count()};
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  jobs = std::max<std::size_t>(1, std::min(jobs, entries.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// Mean and (population) standard deviation of final test metrics per config
// id, in first-appearance order. Runs without test labels count as 0.
inline std::vector<MatrixRow> summarize(const std::vector<MatrixRun>& runs) {
  std::vector<MatrixRow> rows;
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<const MatrixRun*>> members;
  for (const auto& r : runs) {
    auto [it, inserted] = index.emplace(r.config_id, rows.size());
    if (inserted) {
      rows.push_back({r.config_id, r.config.lambda, r.config.metric});
      members.emplace_back();
    }
    members[it->second].push_back(&r);
  }
  const auto stats = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, std::sqrt(s / static_cast<double>(v.size()))};
  };
  for (std::size_t k = 0; k < rows.size(); ++k) {
    std::vector<double> fair, acc, orig;
    double postponed = 0.0, wall = 0.0;
    for (const auto* r : members[k]) {
      fair.push_back(r->summary.final_state.test_fairness.value_or(0.0));
      acc.push_back(r->summary.final_state.test_accuracy.value_or(0.0));
      orig.push_back(r->summary.initial.test_fairness.value_or(0.0));
      postponed += static_cast<double>(r->summary.postponed_total);
      wall += r->wall_seconds;
    }
    auto& row = rows[k];
    row.runs = members[k].size();
    std::tie(row.fairness_mean, row.fairness_std) = stats(fair);
    std::tie(row.accuracy_mean, row.accuracy_std) = stats(acc);
    row.original_fairness_mean = stats(orig).first;
    row.postponed_mean = postponed / static_cast<double>(row.runs);
    row.wall_seconds = wall;
  }
  return rows;
}

}  // namespace falcon
