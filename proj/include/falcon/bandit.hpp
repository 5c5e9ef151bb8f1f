#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "falcon/error.hpp"
#include "falcon/policy.hpp"
#include "falcon/random.hpp"

namespace falcon {

enum class BanditVariant { exp3, exp3_ix };

constexpr std::string_view to_string(BanditVariant v) { return v == BanditVariant::exp3 ? "exp3" : "exp3-ix"; }

inline BanditVariant parse_bandit_variant(std::string_view s) {
  if (s == "exp3") return BanditVariant::exp3;
  if (s == "exp3-ix" || s == "exp3_ix" || s == "exp3ix") return BanditVariant::exp3_ix;
  throw ConfigError("unknown bandit variant: " + std::string(s));
}

// How rewards credited to arms other than the drawn one are importance
// weighted: by the credited arm's own probability, or by the drawn arm's.
enum class NeighborWeighting { own_probability, drawn_probability };

inline NeighborWeighting parse_neighbor_weighting(std::string_view s) {
  if (s == "own") return NeighborWeighting::own_probability;
  if (s == "drawn") return NeighborWeighting::drawn_probability;
  throw ConfigError("unknown neighbor weighting: " + std::string(s));
}

constexpr std::string_view to_string(NeighborWeighting w) {
  return w == NeighborWeighting::own_probability ? "own" : "drawn";
}

// EXP3 / EXP3-IX over K arms. One state exists per worst group pair.
class BanditState {
 public:
  BanditState(std::size_t arms, double gamma, BanditVariant variant = BanditVariant::exp3,
              std::pair<int, int> pair = {0, 1})
      : weights_(arms, 1.0), gamma_(gamma), variant_(variant), pair_(pair) {
    if (arms < 2) throw ConfigError("a bandit needs at least two arms");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
  }

  std::size_t arms() const { return weights_.size(); }
  double gamma() const { return gamma_; }
  BanditVariant variant() const { return variant_; }
  std::pair<int, int> pair() const { return pair_; }
  std::span<const double> weights() const { return weights_; }

  // Implicit-exploration constant used by EXP3-IX.
  double ix_gamma() const { return gamma_ / 2.0; }

  // p_i = (1 - gamma) w_i / sum w + gamma / K
  std::vector<double> probabilities() const {
    double total = 0.0;
    for (double w : weights_) total += w;
    const double k = static_cast<double>(arms());
    std::vector<double> p(arms());
    for (std::size_t i = 0; i < arms(); ++i) p[i] = (1.0 - gamma_) * weights_[i] / total + gamma_ / k;
    return p;
  }

  std::size_t draw(Rng& rng) const {
    const auto p = probabilities();
    return rng.categorical(p);
  }

  // Multiplicative update w_j <- w_j exp(gamma * rhat_j / K), where rhat_j is
  // the credited reward divided by an importance probability.
  void update(std::size_t drawn, std::span<const double> rewards,
              NeighborWeighting weighting = NeighborWeighting::own_probability) {
    if (drawn >= arms()) throw std::out_of_range("drawn arm out of range");
    if (rewards.size() != arms()) throw std::invalid_argument("reward vector size must equal arm count");
    for (double r : rewards)
      if (!(r >= 0.0 && r <= 1.0)) throw std::domain_error("bandit reward outside [0, 1]");
    const auto p = probabilities();
    const double k = static_cast<double>(arms());
    const double extra = variant_ == BanditVariant::exp3_ix ? ix_gamma() : 0.0;
    for (std::size_t j = 0; j < arms(); ++j) {
      if (rewards[j] == 0.0) continue;
      const double prob = (weighting == NeighborWeighting::own_probability || j == drawn) ? p[j] : p[drawn];
      const double estimate = rewards[j] / (prob + extra);
      weights_[j] *= std::exp(gamma_ * estimate / k);
    }
    renormalize_if_large();
  }

  // Direct state restoration (sessions, tests).
  void set_weights(std::vector<double> w) {
    if (w.size() != arms()) throw std::invalid_argument("weight vector size mismatch");
    for (double v : w)
      if (!(v > 0.0) || !std::isfinite(v)) throw std::invalid_argument("weights must be finite and positive");
    weights_ = std::move(w);
  }

 private:
  // Probabilities are invariant to a common scale; divide by the maximum
  // before the largest weight can overflow.
  void renormalize_if_large() {
    const double m = *std::max_element(weights_.begin(), weights_.end());
    if (m < 1e150) return;
    for (double& w : weights_) w = std::max(w / m, std::numeric_limits<double>::min());
  }

  std::vector<double> weights_;
  double gamma_;
  BanditVariant variant_;
  std::pair<int, int> pair_;
};

// Drawn arm gets the full reward, same-slot adjacent risk levels half.
inline std::vector<double> propagate(const PolicySet& set, std::size_t drawn, double reward) {
  std::vector<double> out(set.arms(), 0.0);
  if (reward == 0.0) return out;
  out.at(drawn) = reward;
  for (std::size_t n : set.neighbors(drawn)) out[n] = 0.5 * reward;
  return out;
}

// Scales raw fairness improvements into [0, 1]. The first `steps` rewards
// only clip and are collected; afterwards they are divided by the largest
// absolute value seen during calibration.
class RewardCalibration {
 public:
  explicit RewardCalibration(std::size_t steps = 10) : steps_(steps) {}

  double normalize(double raw) {
    if (!scale_) {
      collected_.push_back(std::abs(raw));
      const double out = std::clamp(raw, 0.0, 1.0);
      if (collected_.size() >= steps_) {
        const double m = collected_.empty() ? 0.0 : *std::max_element(collected_.begin(), collected_.end());
        scale_ = std::max(m, kScaleFloor);
      }
      return out;
    }
    return std::clamp(raw / *scale_, 0.0, 1.0);
  }

  std::size_t steps() const { return steps_; }
  const std::vector<double>& collected() const { return collected_; }
  std::optional<double> scale() const { return scale_; }

  static constexpr double kScaleFloor = 1e-6;

 private:
  std::size_t steps_;
  std::vector<double> collected_;
  std::optional<double> scale_;
};

inline json to_json(const BanditState& b) {
  return {{"pair", {b.pair().first, b.pair().second}},
          {"variant", to_string(b.variant())},
          {"gamma", b.gamma()},
          {"weights", std::vector<double>(b.weights().begin(), b.weights().end())},
          {"probabilities", b.probabilities()}};
}

inline json to_json(const RewardCalibration& c) {
  return {{"steps", c.steps()},
          {"collected", c.collected()},
          {"scale", c.scale() ? json(*c.scale()) : json(nullptr)}};
}

}  // namespace falcon
