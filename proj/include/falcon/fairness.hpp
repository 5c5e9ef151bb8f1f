#pragma once

#include <array>
#include <cctype>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "falcon/error.hpp"
#include "falcon/model.hpp"

namespace falcon {

enum class FairnessMetric { DP, EO, ED, PP, EER };

inline constexpr std::array<FairnessMetric, 5> kAllMetrics = {FairnessMetric::DP, FairnessMetric::EO,
                                                              FairnessMetric::ED, FairnessMetric::PP,
                                                              FairnessMetric::EER};

constexpr std::string_view to_string(FairnessMetric m) {
  switch (m) {
    case FairnessMetric::DP: return "dp";
    case FairnessMetric::EO: return "eo";
    case FairnessMetric::ED: return "ed";
    case FairnessMetric::PP: return "pp";
    case FairnessMetric::EER: return "eer";
  }
  return "?";
}

inline FairnessMetric parse_metric(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (auto m : kAllMetrics)
    if (to_string(m) == lower) return m;
  throw ConfigError("unknown fairness metric: " + std::string(s));
}

// The conditional probabilities the five metrics are built from.
enum class Rate {
  positive,  // p(y_hat=1 | z)
  tpr,       // p(y_hat=1 | y=1, z)
  fpr,       // p(y_hat=1 | y=0, z)
  ppv,       // p(y=1 | y_hat=1, z)
  omission,  // p(y=1 | y_hat=0, z)
  error,     // p(y_hat != y | z)
};

constexpr std::string_view to_string(Rate r) {
  switch (r) {
    case Rate::positive: return "positive_rate";
    case Rate::tpr: return "tpr";
    case Rate::fpr: return "fpr";
    case Rate::ppv: return "ppv";
    case Rate::omission: return "for";
    case Rate::error: return "error_rate";
  }
  return "?";
}

// Rates compared by each metric. For ED and PP the first entry is the one that
// wins a tie (FPR gap >= FNR gap, FOR gap >= FDR gap). |FNR_i - FNR_j| equals
// the TPR gap and |FDR_i - FDR_j| the PPV gap, so those are used directly.
inline std::vector<Rate> compared_rates(FairnessMetric m) {
  switch (m) {
    case FairnessMetric::DP: return {Rate::positive};
    case FairnessMetric::EO: return {Rate::tpr};
    case FairnessMetric::ED: return {Rate::fpr, Rate::tpr};
    case FairnessMetric::PP: return {Rate::omission, Rate::ppv};
    case FairnessMetric::EER: return {Rate::error};
  }
  return {};
}

struct GroupRates {
  std::array<std::array<std::size_t, 2>, 2> cells{};  // [y][y_hat]
  std::size_t size = 0;
  std::optional<double> positive, tpr, fpr, ppv, omission, error;

  std::optional<double> get(Rate r) const {
    switch (r) {
      case Rate::positive: return positive;
      case Rate::tpr: return tpr;
      case Rate::fpr: return fpr;
      case Rate::ppv: return ppv;
      case Rate::omission: return omission;
      case Rate::error: return error;
    }
    return std::nullopt;
  }
};

struct RateTable {
  std::vector<GroupRates> groups;

  int num_groups() const { return static_cast<int>(groups.size()); }
  std::optional<double> rate(Rate r, int z) const { return groups.at(z).get(r); }

  // |rate(z_i) - rate(z_j)|, or nullopt when either side is undefined.
  std::optional<double> gap(Rate r, int zi, int zj) const {
    const auto a = rate(r, zi);
    const auto b = rate(r, zj);
    if (!a || !b) return std::nullopt;
    return std::abs(*a - *b);
  }
};

namespace detail {
inline std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

// Zero-denominator rates are left undefined and never enter a disparity.
inline RateTable compute_rates(const EvalResult& eval) {
  RateTable t;
  int populated = 0;
  for (const auto& c : eval.cells) {
    GroupRates g;
    g.cells = c;
    const std::size_t n00 = c[0][0], n01 = c[0][1], n10 = c[1][0], n11 = c[1][1];
    g.size = n00 + n01 + n10 + n11;
    if (g.size > 0) ++populated;
    g.positive = detail::ratio(n01 + n11, g.size);
    g.tpr = detail::ratio(n11, n10 + n11);
    g.fpr = detail::ratio(n01, n00 + n01);
    g.ppv = detail::ratio(n11, n01 + n11);
    g.omission = detail::ratio(n10, n00 + n10);
    g.error = detail::ratio(n01 + n10, g.size);
    t.groups.push_back(g);
  }
  if (populated < 2) throw UndefinedFairness("fairness needs at least two non-empty groups");
  return t;
}

struct Disparity {
  double value = 0.0;
  int zi = 0;
  int zj = 1;
  Rate dominant = Rate::positive;
};

// Maximum gap over group pairs and compared rates. Ties go to the
// lexicographically smallest pair, then to the first compared rate.
inline Disparity max_disparity(FairnessMetric metric, const RateTable& rates) {
  const auto compared = compared_rates(metric);
  std::optional<Disparity> best;
  for (int i = 0; i < rates.num_groups(); ++i) {
    for (int j = i + 1; j < rates.num_groups(); ++j) {
      for (Rate r : compared) {
        const auto g = rates.gap(r, i, j);
        if (!g) continue;
        if (!best || *g > best->value) best = Disparity{*g, i, j, r};
      }
    }
  }
  if (!best)
    throw UndefinedFairness("no defined " + std::string(to_string(metric)) + " rates for any group pair");
  return *best;
}

inline double fairness_score(FairnessMetric metric, const RateTable& rates) {
  return 1.0 - max_disparity(metric, rates).value;
}

inline std::pair<int, int> worst_pair(FairnessMetric metric, const RateTable& rates) {
  const auto d = max_disparity(metric, rates);
  return {d.zi, d.zj};
}

struct TargetGroup {
  int y = 0;
  int z = 0;
  bool operator==(const TargetGroup&) const = default;
  auto operator<=>(const TargetGroup&) const = default;
};

// Which compared rate has the larger gap within one pair (first rate wins
// ties), and which group of the pair has the lower value of it (z*).
struct PairDiagnosis {
  Rate dominant;
  int low;   // z*
  int high;  // the other group of the pair
  double gap;
};

inline PairDiagnosis diagnose_pair(FairnessMetric metric, const RateTable& rates, std::pair<int, int> pair) {
  const auto [zi, zj] = pair;
  std::optional<PairDiagnosis> best;
  for (Rate r : compared_rates(metric)) {
    const auto g = rates.gap(r, zi, zj);
    if (!g) continue;
    if (!best || *g > best->gap) {
      const int lo = *rates.rate(r, zi) <= *rates.rate(r, zj) ? zi : zj;
      best = PairDiagnosis{r, lo, lo == zi ? zj : zi, *g};
    }
  }
  if (!best)
    throw UndefinedFairness("rates needed by " + std::string(to_string(metric)) + " are undefined for pair (" +
                            std::to_string(zi) + ", " + std::to_string(zj) + ")");
  // Ties between the two groups' values go to the smaller code.
  const auto a = *rates.rate(best->dominant, best->low);
  const auto b = *rates.rate(best->dominant, best->high);
  if (a == b && best->high < best->low) std::swap(best->low, best->high);
  return *best;
}

// Subgroups whose accuracy improvement shrinks the pair's disparity. For DP,
// PP and EER two candidates are returned; the caller picks between them.
// Order is stable per metric so candidates can be addressed by position.
inline std::vector<TargetGroup> target_subgroups(FairnessMetric metric, const RateTable& rates,
                                                 std::pair<int, int> pair) {
  const auto d = diagnose_pair(metric, rates, pair);
  const int zs = d.low;
  const int other = d.high;
  switch (metric) {
    case FairnessMetric::DP: return {{1, zs}, {0, other}};
    case FairnessMetric::EO: return {{1, zs}};
    case FairnessMetric::ED:
      if (d.dominant == Rate::fpr) return {{0, other}};
      return {{1, zs}};
    case FairnessMetric::PP:
      if (d.dominant == Rate::omission) return {{0, other}, {1, other}};
      return {{0, zs}, {1, zs}};
    case FairnessMetric::EER:
      // z* has the lower error; the higher-error group is labeled.
      return {{0, other}, {1, other}};
  }
  return {};
}

// Number of target candidates the metric always yields.
constexpr std::size_t target_count(FairnessMetric m) {
  return (m == FairnessMetric::EO || m == FairnessMetric::ED) ? 1 : 2;
}

struct FairnessReport {
  FairnessMetric metric = FairnessMetric::DP;
  std::pair<int, int> pair{0, 1};
  double disparity = 0.0;
  double score = 1.0;
  Rate dominant = Rate::positive;
  std::vector<TargetGroup> targets;
  RateTable rates;
};

inline FairnessReport make_report(FairnessMetric metric, const EvalResult& eval) {
  FairnessReport r;
  r.metric = metric;
  r.rates = compute_rates(eval);
  const auto d = max_disparity(metric, r.rates);
  r.pair = {d.zi, d.zj};
  r.disparity = d.value;
  r.score = 1.0 - d.value;
  r.dominant = d.dominant;
  r.targets = target_subgroups(metric, r.rates, r.pair);
  return r;
}

inline json to_json(const TargetGroup& t) { return {{"y", t.y}, {"z", t.z}}; }

inline json to_json(const RateTable& t) {
  json groups = json::array();
  constexpr std::array<Rate, 6> all = {Rate::positive, Rate::tpr, Rate::fpr, Rate::ppv, Rate::omission, Rate::error};
  for (int z = 0; z < t.num_groups(); ++z) {
    const auto& g = t.groups[z];
    json row = {{"z", z}, {"size", g.size}, {"cells", g.cells}};
    for (Rate r : all) {
      const auto v = g.get(r);
      row[std::string(to_string(r))] = v ? json(*v) : json(nullptr);
    }
    groups.push_back(std::move(row));
  }
  return groups;
}

inline json to_json(const FairnessReport& r) {
  json targets = json::array();
  for (const auto& t : r.targets) targets.push_back(to_json(t));
  return {{"metric", to_string(r.metric)},
          {"score", r.score},
          {"disparity", r.disparity},
          {"worst_pair", {r.pair.first, r.pair.second}},
          {"dominant_rate", to_string(r.dominant)},
          {"targets", targets},
          {"rates", to_json(r.rates)}};
}

}  // namespace falcon
