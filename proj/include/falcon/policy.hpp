#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "falcon/data.hpp"
#include "falcon/error.hpp"
#include "falcon/fairness.hpp"
#include "falcon/model.hpp"

namespace falcon {

inline const std::vector<double> kDefaultPolicyGrid = {0.3, 0.4, 0.5, 0.6, 0.7};

// Natural-log binary entropy; inputs are clamped away from 0 and 1.
inline double entropy(double p) {
  p = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

// A sample-selection rule for one target subgroup: pick samples of group
// target.z whose predicted probability of label target.y is closest to 1 - r.
// Larger r takes more risk of drawing an undesired label.
struct Policy {
  TargetGroup target;
  double r = 0.5;

  double aim() const { return 1.0 - r; }
  bool operator==(const Policy&) const = default;
};

inline void validate_risk(double r) {
  if (!(r > 0.0 && r < 1.0)) throw ConfigError("policy risk level must lie in (0, 1)");
}

// Arms laid out as target slot x risk level. Slots are positions in the
// metric's target list (see target_subgroups), so an arm keeps its role when
// the concrete groups behind a slot change.
class PolicySet {
 public:
  PolicySet(std::size_t slots, std::vector<double> grid) : slots_(slots), grid_(std::move(grid)) {
    if (slots_ == 0) throw ConfigError("policy set needs at least one target slot");
    if (grid_.empty()) throw ConfigError("policy grid must not be empty");
    for (std::size_t i = 0; i < grid_.size(); ++i) {
      validate_risk(grid_[i]);
      if (i && !(grid_[i] > grid_[i - 1])) throw ConfigError("policy grid must be strictly increasing");
    }
  }

  std::size_t arms() const { return slots_ * grid_.size(); }
  std::size_t slots() const { return slots_; }
  const std::vector<double>& grid() const { return grid_; }

  std::size_t slot_of(std::size_t arm) const { return arm / grid_.size(); }
  std::size_t level_of(std::size_t arm) const { return arm % grid_.size(); }
  std::size_t arm(std::size_t slot, std::size_t level) const { return slot * grid_.size() + level; }
  double risk(std::size_t arm) const { return grid_.at(level_of(arm)); }

  // Arms of the same slot with adjacent risk levels.
  std::vector<std::size_t> neighbors(std::size_t a) const {
    std::vector<std::size_t> out;
    const std::size_t s = slot_of(a), l = level_of(a);
    if (l > 0) out.push_back(arm(s, l - 1));
    if (l + 1 < grid_.size()) out.push_back(arm(s, l + 1));
    return out;
  }

  Policy resolve(std::size_t a, std::span<const TargetGroup> targets) const {
    return Policy{targets[slot_of(a) % targets.size()], risk(a)};
  }

 private:
  std::size_t slots_;
  std::vector<double> grid_;
};

// Up to `batch` unlabeled samples of group policy.target.z nearest to the
// policy's aim point, nearest first; ties by lower id.
inline std::vector<SampleId> select_by_policy(const Policy& policy, const Classifier& model, const SamplePool& pool,
                                              std::size_t batch) {
  if (batch == 0) throw ConfigError("batch size must be >= 1");
  struct Candidate {
    double distance;
    SampleId id;
  };
  std::vector<Candidate> candidates;
  for (SampleId i = 0; i < pool.size(); ++i) {
    if (pool.status(i) != Status::unlabeled || pool.group(i) != policy.target.z) continue;
    const double p = model.predict_proba(pool.features(i));
    const double q = policy.target.y == 1 ? p : 1.0 - p;
    candidates.push_back({std::abs(q - policy.aim()), i});
  }
  const auto less = [](const Candidate& a, const Candidate& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  };
  const std::size_t k = std::min(batch, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k), candidates.end(), less);
  std::vector<SampleId> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(candidates[i].id);
  return out;
}

enum class FilterDecision { accept, postpone };

// Accept a freshly labeled sample only if its (y, z) is one of the targets.
inline FilterDecision trial_filter(int y, int z, std::span<const TargetGroup> targets) {
  for (const auto& t : targets)
    if (t.y == y && t.z == z) return FilterDecision::accept;
  return FilterDecision::postpone;
}

// Moves every postponed sample matching a current target into train.
inline std::vector<SampleId> recall_postponed(SamplePool& pool, std::span<const TargetGroup> targets) {
  std::vector<SampleId> moved;
  for (SampleId i = 0; i < pool.size(); ++i) {
    if (pool.status(i) != Status::postponed) continue;
    if (trial_filter(pool.label(i), pool.group(i), targets) == FilterDecision::accept) {
      pool.set_status(i, Status::train);
      moved.push_back(i);
    }
  }
  return moved;
}

}  // namespace falcon
