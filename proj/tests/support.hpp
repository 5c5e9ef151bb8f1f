#pragma once

// Test-only helpers: fixtures and the independent oracles the unit and
// acceptance tests compare the library against.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "falcon/falcon.hpp"

namespace falcon::testing {

using Cells = std::vector<std::array<std::array<std::size_t, 2>, 2>>;  // [z][y][y_hat]

inline DatasetSource biased_preset() { return load_dataset(std::string(FALCON_CONFIG_DIR) + "/biased_synth.json"); }

// Random confusion tables with every cell in [lo, hi].
inline Cells random_cells(Rng& rng, int groups, std::size_t lo = 1, std::size_t hi = 400) {
  Cells c(groups);
  for (auto& g : c)
    for (auto& row : g)
      for (auto& v : row) v = lo + rng.below(hi - lo + 1);
  return c;
}

// A group described by label prevalence and its two subgroup accuracies:
// acc1 = p(y_hat=1 | y=1), acc0 = p(y_hat=0 | y=0).
struct GroupModel {
  long double prevalence, acc1, acc0;
};

inline GroupModel group_model(const std::array<std::array<std::size_t, 2>, 2>& g) {
  const long double n0 = g[0][0] + g[0][1], n1 = g[1][0] + g[1][1];
  return {n1 / (n0 + n1), g[1][1] / n1, g[0][0] / n0};
}

// Closed-form rate of a group as a function of prevalence and subgroup
// accuracies; no cell counts involved.
inline long double closed_form(Rate r, const GroupModel& m) {
  const long double p = m.prevalence, a1 = m.acc1, a0 = m.acc0;
  switch (r) {
    case Rate::positive: return p * a1 + (1 - p) * (1 - a0);
    case Rate::tpr: return a1;
    case Rate::fpr: return 1 - a0;
    case Rate::ppv: return p * a1 / (p * a1 + (1 - p) * (1 - a0));
    case Rate::omission: return p * (1 - a1) / (p * (1 - a1) + (1 - p) * a0);
    case Rate::error: return p * (1 - a1) + (1 - p) * (1 - a0);
  }
  return 0;
}

inline std::vector<Rate> metric_rates(FairnessMetric m) {
  switch (m) {
    case FairnessMetric::DP: return {Rate::positive};
    case FairnessMetric::EO: return {Rate::tpr};
    case FairnessMetric::ED: return {Rate::fpr, Rate::tpr};
    case FairnessMetric::PP: return {Rate::omission, Rate::ppv};
    case FairnessMetric::EER: return {Rate::error};
  }
  return {};
}

inline long double pair_disparity(FairnessMetric metric, const std::vector<GroupModel>& g, int zi, int zj) {
  long double d = 0;
  for (Rate r : metric_rates(metric)) d = std::max(d, std::fabs(closed_form(r, g[zi]) - closed_form(r, g[zj])));
  return d;
}

// Subgroups (y, z) of the pair whose accuracy, nudged up by epsilon, lowers
// the pair's disparity.
inline std::set<TargetGroup> perturbation_oracle(FairnessMetric metric, const Cells& cells, std::pair<int, int> pair,
                                                 long double eps = 1e-9L) {
  std::vector<GroupModel> g;
  for (const auto& c : cells) g.push_back(group_model(c));
  const long double base = pair_disparity(metric, g, pair.first, pair.second);
  std::set<TargetGroup> out;
  for (int z : {pair.first, pair.second}) {
    for (int y : {0, 1}) {
      auto h = g;
      (y == 1 ? h[z].acc1 : h[z].acc0) += eps;
      if (pair_disparity(metric, h, pair.first, pair.second) < base) out.insert({y, z});
    }
  }
  return out;
}

// Whether the compared gaps of a pair are too close for a first-order
// perturbation to be meaningful (exact ties have measure zero in random data).
inline bool near_tie(FairnessMetric metric, const Cells& cells, std::pair<int, int> pair) {
  std::vector<GroupModel> g;
  for (const auto& c : cells) g.push_back(group_model(c));
  const auto rates = metric_rates(metric);
  std::vector<long double> gaps;
  for (Rate r : rates) {
    const long double a = closed_form(r, g[pair.first]), b = closed_form(r, g[pair.second]);
    if (std::fabs(a - b) < 1e-6L) return true;
    gaps.push_back(std::fabs(a - b));
  }
  return gaps.size() == 2 && std::fabs(gaps[0] - gaps[1]) < 1e-6L;
}

// Worst pair by exhaustive scan over closed-form rates; ties to the
// lexicographically first pair.
inline std::pair<int, int> brute_worst_pair(FairnessMetric metric, const Cells& cells) {
  std::vector<GroupModel> g;
  for (const auto& c : cells) g.push_back(group_model(c));
  std::pair<int, int> best{0, 1};
  long double bd = -1;
  for (int i = 0; i < static_cast<int>(g.size()); ++i)
    for (int j = i + 1; j < static_cast<int>(g.size()); ++j) {
      const auto d = pair_disparity(metric, g, i, j);
      if (d > bd) {
        bd = d;
        best = {i, j};
      }
    }
  return best;
}

inline long double brute_score(FairnessMetric metric, const Cells& cells) {
  std::vector<GroupModel> g;
  for (const auto& c : cells) g.push_back(group_model(c));
  long double d = 0;
  for (int i = 0; i < static_cast<int>(g.size()); ++i)
    for (int j = i + 1; j < static_cast<int>(g.size()); ++j) d = std::max(d, pair_disparity(metric, g, i, j));
  return 1 - d;
}

// Per-sample recomputation of the validation fairness score of a model.
inline double recompute_fairness(FairnessMetric metric, const Classifier& model, const SamplePool& pool,
                                 Status status) {
  Cells cells(pool.num_groups(), {{{0, 0}, {0, 0}}});
  const auto truth = pool.oracle_labels();
  for (SampleId i = 0; i < pool.size(); ++i) {
    if (pool.status(i) != status) continue;
    const auto f = pool.features(i);
    double s = model.weights().back();
    for (std::size_t c = 0; c < f.size(); ++c) s += model.weights()[c] * f[c];
    const int yhat = 1.0 / (1.0 + std::exp(-s)) >= 0.5 ? 1 : 0;
    ++cells[pool.group(i)][*truth[i]][yhat];
  }
  return static_cast<double>(brute_score(metric, cells));
}

// Small pool with two groups, already split.
inline SamplePool small_pool(std::uint64_t seed, std::size_t per_subgroup = 60) {
  SynthSpec s;
  s.dim = 3;
  s.seed = seed;
  s.subgroups = {{0, 0, per_subgroup * 2, {-0.8, -1.0, 0.0}},
                 {1, 0, per_subgroup / 2, {0.8, -1.0, 0.0}},
                 {0, 1, per_subgroup, {-0.8, 1.0, 0.0}},
                 {1, 1, per_subgroup * 2, {0.8, 1.0, 0.0}}};
  return split(synthesize(s), SplitFractions{0.1, 0.6, 0.2, 0.1}, seed + 1);
}

}  // namespace falcon::testing
