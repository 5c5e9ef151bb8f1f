#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"

#include "falcon/data.hpp"
#include "falcon/error.hpp"
#include "falcon/log.hpp"

namespace falcon {

struct TrainingConfig {
  double learning_rate = 0.1;
  int epochs = 500;
  // Penalty alpha in  mean log-loss + alpha/(2n) * ||w||^2  (bias excluded).
  // alpha = 1 corresponds to inverse regularization strength C = 1.
  double l2 = 1.0;
  std::uint64_t seed = 0;
  // Stop early once the gradient norm falls below this.
  double tolerance = 1e-8;
  bool warm_start = false;

  bool operator==(const TrainingConfig&) const = default;
};

inline json to_json(const TrainingConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"epochs", c.epochs}, {"l2", c.l2},
          {"seed", c.seed},                   {"tolerance", c.tolerance}, {"warm_start", c.warm_start}};
}

inline TrainingConfig training_config_from_json(const json& j) {
  TrainingConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.l2 = j.value("l2", c.l2);
  c.seed = j.value("seed", c.seed);
  c.tolerance = j.value("tolerance", c.tolerance);
  c.warm_start = j.value("warm_start", c.warm_start);
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (c.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (c.l2 < 0.0) throw ConfigError("l2 must be >= 0");
  return c;
}

inline constexpr double kProbabilityClamp = 1e-12;

inline double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

// Binary logistic regression. weights() has dim + 1 entries, the last being
// the bias.
class Classifier {
 public:
  Classifier() = default;
  explicit Classifier(std::size_t dim, TrainingConfig config = {})
      : weights_(dim + 1, 0.0), config_(config) {}
  Classifier(std::vector<double> weights, TrainingConfig config) : weights_(std::move(weights)), config_(config) {
    if (weights_.empty()) throw DataError("classifier needs at least a bias weight");
    for (double w : weights_)
      if (!std::isfinite(w)) throw DataError("classifier weight is not finite");
  }

  std::size_t dim() const { return weights_.size() - 1; }
  std::span<const double> weights() const { return weights_; }
  const TrainingConfig& config() const { return config_; }

  double score(std::span<const double> x) const {
    if (x.size() != dim()) throw DataError("feature dimension mismatch in predict");
    double s = weights_.back();
    for (std::size_t c = 0; c < x.size(); ++c) s += weights_[c] * x[c];
    return s;
  }

  // p(y_hat = 1 | x), strictly inside (0, 1).
  double predict_proba(std::span<const double> x) const {
    return std::clamp(sigmoid(score(x)), kProbabilityClamp, 1.0 - kProbabilityClamp);
  }

  int predict(std::span<const double> x) const { return predict_proba(x) >= 0.5 ? 1 : 0; }

  bool operator==(const Classifier&) const = default;

 private:
  std::vector<double> weights_;
  TrainingConfig config_;
};

inline double predict_proba(const Classifier& model, std::span<const double> x) { return model.predict_proba(x); }

// Dense row-major design matrix with binary targets.
struct LabeledMatrix {
  std::size_t dim = 0;
  std::vector<double> x;
  std::vector<int> y;

  std::size_t rows() const { return y.size(); }
  std::span<const double> row(std::size_t i) const { return {x.data() + i * dim, dim}; }
};

inline LabeledMatrix gather(const SamplePool& pool, std::span<const SampleId> ids) {
  LabeledMatrix m{pool.dim(), {}, {}};
  m.x.reserve(ids.size() * pool.dim());
  m.y.reserve(ids.size());
  for (SampleId i : ids) {
    const auto f = pool.features(i);
    m.x.insert(m.x.end(), f.begin(), f.end());
    m.y.push_back(pool.label(i));
  }
  return m;
}

// Regularized mean log-loss  (1/n) sum_i l(w; x_i, y_i) + l2/(2n) ||w_{0..d-1}||^2.
inline double log_loss(const LabeledMatrix& data, std::span<const double> w, double l2) {
  const std::size_t n = data.rows();
  const std::size_t d = data.dim;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = w[d];
    const auto xi = data.row(i);
    for (std::size_t c = 0; c < d; ++c) s += w[c] * xi[c];
    // log(1 + e^s) - y s, computed stably
    const double softplus = s > 0.0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s));
    loss += softplus - data.y[i] * s;
  }
  double reg = 0.0;
  for (std::size_t c = 0; c < d; ++c) reg += w[c] * w[c];
  return (loss + 0.5 * l2 * reg) / static_cast<double>(n);
}

inline std::vector<double> log_loss_gradient(const LabeledMatrix& data, std::span<const double> w, double l2) {
  const std::size_t n = data.rows();
  const std::size_t d = data.dim;
  std::vector<double> g(d + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = w[d];
    const auto xi = data.row(i);
    for (std::size_t c = 0; c < d; ++c) s += w[c] * xi[c];
    const double r = sigmoid(s) - data.y[i];
    for (std::size_t c = 0; c < d; ++c) g[c] += r * xi[c];
    g[d] += r;
  }
  for (std::size_t c = 0; c < d; ++c) g[c] += l2 * w[c];
  for (double& v : g) v /= static_cast<double>(n);
  return g;
}

// Number of train() calls made on the calling thread.
inline std::size_t& training_calls() {
  thread_local std::size_t n = 0;
  return n;
}

// Full-batch gradient descent. A step that would increase the loss is
// rejected and the learning rate halved, so the loss never increases.
inline Classifier train(const LabeledMatrix& data, const TrainingConfig& config,
                        const Classifier* warm = nullptr) {
  if (data.rows() == 0) throw DataError("cannot train on an empty training set");
  ++training_calls();
  const auto positives = std::count(data.y.begin(), data.y.end(), 1);
  if (positives == 0 || positives == static_cast<long>(data.rows()))
    log::warn("training set has a single class ({} samples); predictions will be near-constant", data.rows());

  std::vector<double> w(data.dim + 1, 0.0);
  if (warm && config.warm_start && warm->dim() == data.dim) w.assign(warm->weights().begin(), warm->weights().end());

  double lr = config.learning_rate;
  double loss = log_loss(data, w, config.l2);
  std::vector<double> candidate(w.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto g = log_loss_gradient(data, w, config.l2);
    double gnorm = 0.0;
    for (double v : g) gnorm += v * v;
    if (std::sqrt(gnorm) < config.tolerance) break;
    while (true) {
      for (std::size_t c = 0; c < w.size(); ++c) candidate[c] = w[c] - lr * g[c];
      const double next = log_loss(data, candidate, config.l2);
      if (next <= loss) {
        w.swap(candidate);
        loss = next;
        break;
      }
      lr *= 0.5;
      if (lr < 1e-12) break;
    }
    if (lr < 1e-12) break;
  }
  return Classifier(std::move(w), config);
}

inline Classifier train(const SamplePool& pool, std::span<const SampleId> ids, const TrainingConfig& config,
                        const Classifier* warm = nullptr) {
  return train(gather(pool, ids), config, warm);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalResult {
  double accuracy = 0.0;
  // cells[z][y][y_hat]
  std::vector<std::array<std::array<std::size_t, 2>, 2>> cells;

  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& g : cells)
      for (const auto& r : g) t += r[0] + r[1];
    return t;
  }
  std::size_t cell(int z, int y, int y_hat) const { return cells.at(z)[y][y_hat]; }
};

// Builds an EvalResult from already-known outcome cells.
inline EvalResult eval_from_cells(std::vector<std::array<std::array<std::size_t, 2>, 2>> cells) {
  EvalResult r{0.0, std::move(cells)};
  std::size_t correct = 0;
  for (const auto& g : r.cells) correct += g[0][0] + g[1][1];
  const std::size_t n = r.total();
  r.accuracy = n ? static_cast<double>(correct) / static_cast<double>(n) : 0.0;
  return r;
}

// Thresholds p(y_hat=1|x) at 0.5 on every sample with the given status.
inline EvalResult evaluate(const Classifier& model, const SamplePool& pool, Status status) {
  std::vector<std::array<std::array<std::size_t, 2>, 2>> cells(pool.num_groups(), {{{0, 0}, {0, 0}}});
  bool any = false;
  for (SampleId i = 0; i < pool.size(); ++i) {
    if (pool.status(i) != status) continue;
    any = true;
    const int y = pool.label(i);
    const int yh = model.predict(pool.features(i));
    ++cells[pool.group(i)][y][yh];
  }
  if (!any) throw DataError("cannot evaluate on an empty " + std::string(to_string(status)) + " split");
  return eval_from_cells(std::move(cells));
}

// Checkpoint: {"weights": [...], "config": {...}}. Doubles are written in
// shortest round-trip form, so load(save(m)) == m.
inline json to_json(const Classifier& m) {
  return {{"weights", std::vector<double>(m.weights().begin(), m.weights().end())}, {"config", to_json(m.config())}};
}

inline Classifier classifier_from_json(const json& j) {
  try {
    return Classifier(j.at("weights").get<std::vector<double>>(), training_config_from_json(j.at("config")));
  } catch (const json::exception& e) {
    throw DataError(std::string("invalid model checkpoint: ") + e.what());
  }
}

}  // namespace falcon
