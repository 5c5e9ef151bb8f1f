#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "falcon/csv.hpp"
#include "falcon/error.hpp"
#include "falcon/log.hpp"
#include "falcon/random.hpp"

namespace falcon {

using SampleId = std::size_t;
using nlohmann::json;

enum class Status : std::uint8_t { train, unlabeled, postponed, validation, test };

inline constexpr std::array<Status, 5> kAllStatuses = {
    Status::train, Status::unlabeled, Status::postponed, Status::validation, Status::test};

constexpr std::string_view to_string(Status s) {
  switch (s) {
    case Status::train: return "train";
    case Status::unlabeled: return "unlabeled";
    case Status::postponed: return "postponed";
    case Status::validation: return "validation";
    case Status::test: return "test";
  }
  return "?";
}

inline Status parse_status(std::string_view s) {
  for (Status st : kAllStatuses)
    if (to_string(st) == s) return st;
  if (s == "val") return Status::validation;
  throw DataError("unknown split/status name: " + std::string(s));
}

// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw DataError("not a number: '" + std::string(s) + "'");
  return v;
}

// Feature vectors with sensitive-group codes, labels, and per-sample status.
//
// Labels of samples whose status is `unlabeled` are hidden: label() throws for
// them. The simulator obtains ground truth through oracle_labels(), which is
// the single sanctioned back door.
class SamplePool {
 public:
  SamplePool() = default;
  SamplePool(std::vector<std::string> feature_names, int num_groups)
      : names_(std::move(feature_names)),
        numeric_(names_.size(), true),
        num_groups_(num_groups) {
    if (num_groups_ < 1) throw DataError("pool needs at least one group code");
  }

  SampleId add(std::span<const double> x, int z, std::optional<int> y,
               Status status = Status::unlabeled) {
    if (x.size() != dim()) throw DataError("feature dimension mismatch");
    if (z < 0 || z >= num_groups_) throw DataError("group code out of range");
    if (y && *y != 0 && *y != 1) throw DataError("label must be 0 or 1");
    if (status == Status::train && !y) throw DataError("train samples must carry a label");
    features_.insert(features_.end(), x.begin(), x.end());
    groups_.push_back(z);
    labels_.push_back(y ? static_cast<std::int8_t>(*y) : kUnknown);
    status_.push_back(status);
    return groups_.size() - 1;
  }

  std::size_t size() const { return groups_.size(); }
  std::size_t dim() const { return names_.size(); }
  int num_groups() const { return num_groups_; }
  const std::vector<std::string>& feature_names() const { return names_; }

  // Columns eligible for standardization (one-hot columns are not).
  const std::vector<bool>& numeric_columns() const { return numeric_; }
  void set_numeric_columns(std::vector<bool> mask) {
    if (mask.size() != dim()) throw DataError("numeric mask size mismatch");
    numeric_ = std::move(mask);
  }

  std::span<const double> features(SampleId i) const {
    return {features_.data() + i * dim(), dim()};
  }
  std::span<double> mutable_features(SampleId i) {
    return {features_.data() + i * dim(), dim()};
  }

  int group(SampleId i) const { return groups_.at(i); }
  Status status(SampleId i) const { return status_.at(i); }

  void set_status(SampleId i, Status s) {
    if (s == Status::train && labels_.at(i) == kUnknown)
      throw LabelAccessError("cannot move an unlabeled sample into train");
    status_.at(i) = s;
  }

  bool has_label(SampleId i) const {
    return status_.at(i) != Status::unlabeled && labels_[i] != kUnknown;
  }

  int label(SampleId i) const {
    if (status_.at(i) == Status::unlabeled)
      throw LabelAccessError("label of unlabeled sample " + std::to_string(i) + " is hidden");
    if (labels_[i] == kUnknown)
      throw LabelAccessError("sample " + std::to_string(i) + " has no label");
    return labels_[i];
  }

  // Stores the label returned by a labeler. The status is left unchanged;
  // callers move the sample to train or postponed afterwards.
  void record_label(SampleId i, int y) {
    if (y != 0 && y != 1) throw DataError("label must be 0 or 1");
    labels_.at(i) = static_cast<std::int8_t>(y);
  }

  // Ground truth for simulation and offline analysis only.
  std::vector<std::optional<int>> oracle_labels() const {
    std::vector<std::optional<int>> out(size());
    for (std::size_t i = 0; i < size(); ++i)
      if (labels_[i] != kUnknown) out[i] = labels_[i];
    return out;
  }

  std::vector<SampleId> ids(Status s) const {
    std::vector<SampleId> out;
    for (std::size_t i = 0; i < size(); ++i)
      if (status_[i] == s) out.push_back(i);
    return out;
  }

  std::size_t count(Status s) const {
    return static_cast<std::size_t>(std::count(status_.begin(), status_.end(), s));
  }

  bool operator==(const SamplePool&) const = default;

 private:
  static constexpr std::int8_t kUnknown = -1;

  std::vector<std::string> names_;
  std::vector<bool> numeric_;
  int num_groups_ = 2;
  std::vector<double> features_;
  std::vector<int> groups_;
  std::vector<std::int8_t> labels_;
  std::vector<Status> status_;
};

// ---------------------------------------------------------------------------
// Schema and CSV ingestion

struct FeatureColumn {
  enum class Kind { numeric, categorical };
  std::string name;
  Kind kind = Kind::numeric;
  // One-hot levels in output-column order. Empty: inferred from the data,
  // sorted lexicographically.
  std::vector<std::string> categories;
};

struct SensitiveColumn {
  std::string name;
  std::map<std::string, int> codes;  // category -> group code
};

struct LabelColumn {
  std::string name;
  std::string positive = "1";
  std::string negative = "0";
};

struct DatasetSchema {
  std::vector<FeatureColumn> feature_columns;
  SensitiveColumn sensitive_column;
  LabelColumn label_column;
  // Optional column holding a status name per row (written by `split`).
  std::string split_column = "split";

  void validate() const {
    for (const auto& f : feature_columns) {
      if (f.name == sensitive_column.name || f.name == label_column.name)
        throw ConfigError("column '" + f.name + "' is both a feature and the sensitive/label column");
    }
    if (sensitive_column.name == label_column.name)
      throw ConfigError("sensitive and label columns must differ");
    if (sensitive_column.codes.empty()) throw ConfigError("sensitive column needs a code map");
    for (const auto& [cat, code] : sensitive_column.codes)
      if (code < 0) throw ConfigError("negative group code for '" + cat + "'");
    if (label_column.positive == label_column.negative)
      throw ConfigError("label positive and negative values must differ");
  }

  int num_groups() const {
    int m = 0;
    for (const auto& [cat, code] : sensitive_column.codes) m = std::max(m, code + 1);
    return m;
  }
};

inline DatasetSchema schema_from_json(const json& j) {
  DatasetSchema s;
  try {
    for (const auto& f : j.at("feature_columns")) {
      FeatureColumn c;
      if (f.is_string()) {
        c.name = f.get<std::string>();
      } else {
        c.name = f.at("name").get<std::string>();
        const auto kind = f.value("kind", std::string("numeric"));
        if (kind == "numeric") c.kind = FeatureColumn::Kind::numeric;
        else if (kind == "categorical" || kind == "one-hot") c.kind = FeatureColumn::Kind::categorical;
        else throw ConfigError("unknown feature kind: " + kind);
        if (f.contains("categories")) c.categories = f.at("categories").get<std::vector<std::string>>();
      }
      s.feature_columns.push_back(std::move(c));
    }
    const auto& sc = j.at("sensitive_column");
    s.sensitive_column.name = sc.at("name").get<std::string>();
    s.sensitive_column.codes = sc.at("codes").get<std::map<std::string, int>>();
    const auto& lc = j.at("label_column");
    s.label_column.name = lc.at("name").get<std::string>();
    if (lc.contains("positive")) s.label_column.positive = lc.at("positive").get<std::string>();
    if (lc.contains("negative")) s.label_column.negative = lc.at("negative").get<std::string>();
    if (j.contains("split_column")) s.split_column = j.at("split_column").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid schema: ") + e.what());
  }
  s.validate();
  return s;
}

inline json to_json(const DatasetSchema& s) {
  json cols = json::array();
  for (const auto& f : s.feature_columns) {
    json c = {{"name", f.name},
              {"kind", f.kind == FeatureColumn::Kind::numeric ? "numeric" : "categorical"}};
    if (!f.categories.empty()) c["categories"] = f.categories;
    cols.push_back(std::move(c));
  }
  return {{"feature_columns", cols},
          {"sensitive_column", {{"name", s.sensitive_column.name}, {"codes", s.sensitive_column.codes}}},
          {"label_column",
           {{"name", s.label_column.name},
            {"positive", s.label_column.positive},
            {"negative", s.label_column.negative}}},
          {"split_column", s.split_column}};
}

inline DatasetSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema " + path);
  try {
    return schema_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError("schema " + path + ": " + e.what());
  }
}

// All-numeric schema matching write_csv's output for `pool`.
inline DatasetSchema schema_for(const SamplePool& pool) {
  DatasetSchema s;
  for (const auto& n : pool.feature_names()) s.feature_columns.push_back({n, FeatureColumn::Kind::numeric, {}});
  s.sensitive_column.name = "z";
  for (int g = 0; g < pool.num_groups(); ++g) s.sensitive_column.codes[std::to_string(g)] = g;
  s.label_column.name = "y";
  return s;
}

// One sample per row. Categorical features are one-hot encoded; an empty
// label cell means the label is unknown. Rows go to `unlabeled` unless the
// table has the schema's split column.
inline SamplePool load_csv(const csv::Table& table, const DatasetSchema& schema) {
  schema.validate();
  const std::size_t zcol = table.column(schema.sensitive_column.name);
  const std::size_t ycol = table.column(schema.label_column.name);
  const bool has_split = table.has_column(schema.split_column);
  const std::size_t scol = has_split ? table.column(schema.split_column) : 0;

  struct Expanded {
    std::size_t source;
    std::vector<std::string> levels;  // empty for numeric
  };
  std::vector<Expanded> expanded;
  std::vector<std::string> names;
  std::vector<bool> numeric;
  for (const auto& f : schema.feature_columns) {
    const std::size_t src = table.column(f.name);
    if (f.kind == FeatureColumn::Kind::numeric) {
      expanded.push_back({src, {}});
      names.push_back(f.name);
      numeric.push_back(true);
      continue;
    }
    std::vector<std::string> levels = f.categories;
    if (levels.empty()) {
      for (const auto& row : table.rows) levels.push_back(row[src]);
      std::sort(levels.begin(), levels.end());
      levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    }
    for (const auto& lv : levels) {
      names.push_back(f.name + "=" + lv);
      numeric.push_back(false);
    }
    expanded.push_back({src, std::move(levels)});
  }

  SamplePool pool(names, schema.num_groups());
  pool.set_numeric_columns(numeric);
  std::vector<double> x(names.size());
  std::size_t rowno = 1;
  for (const auto& row : table.rows) {
    ++rowno;
    std::size_t k = 0;
    for (const auto& e : expanded) {
      const std::string& cell = row[e.source];
      if (e.levels.empty()) {
        try {
          x[k++] = parse_double(cell);
        } catch (const DataError&) {
          throw DataError("row " + std::to_string(rowno) + ": non-numeric value '" + cell + "'");
        }
      } else {
        auto it = std::find(e.levels.begin(), e.levels.end(), cell);
        if (it == e.levels.end())
          throw DataError("row " + std::to_string(rowno) + ": unknown category '" + cell + "'");
        for (std::size_t l = 0; l < e.levels.size(); ++l) x[k++] = (e.levels.begin() + l == it) ? 1.0 : 0.0;
      }
    }
    const auto zit = schema.sensitive_column.codes.find(row[zcol]);
    if (zit == schema.sensitive_column.codes.end())
      throw DataError("row " + std::to_string(rowno) + ": unmappable sensitive category '" + row[zcol] + "'");
    std::optional<int> y;
    const std::string& ycell = row[ycol];
    if (ycell == schema.label_column.positive) y = 1;
    else if (ycell == schema.label_column.negative) y = 0;
    else if (!ycell.empty())
      throw DataError("row " + std::to_string(rowno) + ": non-binary label value '" + ycell + "'");
    Status st = Status::unlabeled;
    if (has_split && !row[scol].empty()) st = parse_status(row[scol]);
    if (st == Status::train && !y)
      throw DataError("row " + std::to_string(rowno) + ": train row without a label");
    pool.add(x, zit->second, y, st);
  }
  return pool;
}

inline SamplePool load_csv(const std::string& path, const DatasetSchema& schema) {
  return load_csv(csv::read_file(path), schema);
}

// Writes features (expanded, as numeric columns), z, y and split columns.
// Readable with schema_for(pool).
inline void write_csv(std::ostream& out, const SamplePool& pool, bool with_split = true) {
  csv::Row header = pool.feature_names();
  header.push_back("z");
  header.push_back("y");
  if (with_split) header.push_back("split");
  csv::write_row(out, header);
  const auto truth = pool.oracle_labels();
  csv::Row row;
  for (SampleId i = 0; i < pool.size(); ++i) {
    row.clear();
    for (double v : pool.features(i)) row.push_back(format_double(v));
    row.push_back(std::to_string(pool.group(i)));
    row.push_back(truth[i] ? std::to_string(*truth[i]) : std::string());
    if (with_split) row.push_back(std::string(to_string(pool.status(i))));
    csv::write_row(out, row);
  }
}

// ---------------------------------------------------------------------------
// Subgroup counts

// Counts indexed by (y, z).
struct SubgroupCounts {
  int num_groups = 0;
  std::vector<std::array<std::size_t, 2>> by_group;  // [z][y]

  std::size_t at(int y, int z) const { return by_group.at(z).at(y); }
  std::size_t total() const {
    std::size_t t = 0;
    for (const auto& g : by_group) t += g[0] + g[1];
    return t;
  }
};

// Simulator-side: reads ground truth, so it works on hidden labels as well.
inline SubgroupCounts subgroup_counts(const SamplePool& pool, std::optional<Status> status = std::nullopt) {
  SubgroupCounts c{pool.num_groups(), std::vector<std::array<std::size_t, 2>>(pool.num_groups(), {0, 0})};
  const auto truth = pool.oracle_labels();
  for (SampleId i = 0; i < pool.size(); ++i) {
    if (status && pool.status(i) != *status) continue;
    if (!truth[i]) throw DataError("subgroup_counts: sample " + std::to_string(i) + " has no label");
    ++c.by_group[pool.group(i)][*truth[i]];
  }
  return c;
}

// ---------------------------------------------------------------------------
// Splitting

// Order: train, unlabeled, test, validation.
struct SplitFractions {
  double train = 0.1;
  double unlabeled = 0.6;
  double test = 0.2;
  double validation = 0.1;

  std::array<double, 4> as_array() const { return {train, unlabeled, test, validation}; }
  static constexpr std::array<Status, 4> kOrder = {Status::train, Status::unlabeled, Status::test,
                                                   Status::validation};
};

inline json to_json(const SplitFractions& f) {
  return {{"train", f.train}, {"unlabeled", f.unlabeled}, {"test", f.test}, {"validation", f.validation}};
}

inline SplitFractions split_fractions_from_json(const json& j) {
  SplitFractions f;
  try {
    f.train = j.value("train", f.train);
    f.unlabeled = j.value("unlabeled", f.unlabeled);
    f.test = j.value("test", f.test);
    f.validation = j.value("validation", f.validation);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid split fractions: ") + e.what());
  }
  return f;
}

// Largest-remainder apportionment of n items over the fractions.
inline std::array<std::size_t, 4> apportion(std::size_t n, const std::array<double, 4>& f) {
  std::array<std::size_t, 4> out{};
  std::array<double, 4> rem{};
  std::size_t used = 0;
  for (int s = 0; s < 4; ++s) {
    const double exact = f[s] * static_cast<double>(n);
    out[s] = static_cast<std::size_t>(std::floor(exact));
    rem[s] = exact - static_cast<double>(out[s]);
    used += out[s];
  }
  while (used < n) {
    int best = 0;
    for (int s = 1; s < 4; ++s)
      if (rem[s] > rem[best]) best = s;
    ++out[best];
    rem[best] = -1.0;
    ++used;
  }
  return out;
}

// Assigns statuses by a seeded shuffle stratified by (y, z). Samples are
// ordered stratum by stratum (each stratum shuffled) and dealt to splits by a
// running-deficit rule, so global split sizes are exact and every stratum is
// spread proportionally. Samples without a label always go to `unlabeled`.
// Returns human-readable warnings (e.g. strata too small to cover all splits).
inline std::vector<std::string> assign_splits(SamplePool& pool, const SplitFractions& fractions,
                                              std::uint64_t seed) {
  const auto f = fractions.as_array();
  double sum = 0.0;
  for (double v : f) {
    if (!(v > 0.0)) throw ConfigError("split fractions must be positive");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");

  std::vector<std::string> warnings;
  const auto truth = pool.oracle_labels();
  std::vector<std::vector<SampleId>> strata(static_cast<std::size_t>(pool.num_groups()) * 2);
  std::vector<SampleId> unknown;
  for (SampleId i = 0; i < pool.size(); ++i) {
    if (!truth[i]) unknown.push_back(i);
    else strata[static_cast<std::size_t>(pool.group(i)) * 2 + *truth[i]].push_back(i);
  }
  Rng rng(seed, "split");
  std::vector<SampleId> order;
  for (std::size_t k = 0; k < strata.size(); ++k) {
    auto& s = strata[k];
    rng.shuffle(std::span<SampleId>(s));
    if (!s.empty() && s.size() < 4)
      warnings.push_back("subgroup (y=" + std::to_string(k % 2) + ", z=" + std::to_string(k / 2) + ") has " +
                         std::to_string(s.size()) + " samples; some splits will lack it");
    order.insert(order.end(), s.begin(), s.end());
  }

  const std::size_t n = order.size();
  const auto target = apportion(n, f);
  std::array<std::size_t, 4> assigned{};
  for (std::size_t pos = 0; pos < n; ++pos) {
    int best = -1;
    double best_deficit = 0.0;
    for (int s = 0; s < 4; ++s) {
      if (assigned[s] >= target[s]) continue;
      const double deficit = static_cast<double>(target[s]) * static_cast<double>(pos + 1) / static_cast<double>(n) -
                             static_cast<double>(assigned[s]);
      if (best < 0 || deficit > best_deficit) {
        best = s;
        best_deficit = deficit;
      }
    }
    ++assigned[best];
    pool.set_status(order[pos], SplitFractions::kOrder[best]);
  }
  for (SampleId i : unknown) pool.set_status(i, Status::unlabeled);
  for (const auto& w : warnings) log::warn("{}", w);
  return warnings;
}

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;
};

// z-scores numeric columns with statistics from the train split, in place.
inline Standardizer standardize(SamplePool& pool) {
  const std::size_t d = pool.dim();
  Standardizer st{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
  const auto train = pool.ids(Status::train);
  if (train.empty()) return st;
  const auto& numeric = pool.numeric_columns();
  for (std::size_t c = 0; c < d; ++c) {
    if (!numeric[c]) continue;
    double m = 0.0;
    for (SampleId i : train) m += pool.features(i)[c];
    m /= static_cast<double>(train.size());
    double v = 0.0;
    for (SampleId i : train) v += (pool.features(i)[c] - m) * (pool.features(i)[c] - m);
    v /= static_cast<double>(train.size());
    st.mean[c] = m;
    st.scale[c] = v > 1e-24 ? std::sqrt(v) : 1.0;
  }
  for (SampleId i = 0; i < pool.size(); ++i) {
    auto x = pool.mutable_features(i);
    for (std::size_t c = 0; c < d; ++c) x[c] = (x[c] - st.mean[c]) / st.scale[c];
  }
  return st;
}

// Stratified split followed by train-statistics standardization.
inline SamplePool split(SamplePool pool, const SplitFractions& fractions, std::uint64_t seed) {
  assign_splits(pool, fractions, seed);
  standardize(pool);
  return pool;
}

// ---------------------------------------------------------------------------
// Synthetic pools

struct SubgroupSpec {
  int y = 0;
  int z = 0;
  std::size_t count = 0;
  std::vector<double> mean;
};

struct SynthSpec {
  std::size_t dim = 2;
  double scale = 1.0;  // standard deviation of the shared isotropic covariance
  std::uint64_t seed = 0;
  std::vector<SubgroupSpec> subgroups;
};

inline SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  try {
    s.dim = j.at("dim").get<std::size_t>();
    s.scale = j.value("scale", 1.0);
    s.seed = j.value("seed", std::uint64_t{0});
    for (const auto& g : j.at("subgroups"))
      s.subgroups.push_back({g.at("y").get<int>(), g.at("z").get<int>(), g.at("count").get<std::size_t>(),
                             g.at("mean").get<std::vector<double>>()});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid synthetic spec: ") + e.what());
  }
  return s;
}

inline json to_json(const SynthSpec& s) {
  json groups = json::array();
  for (const auto& g : s.subgroups) groups.push_back({{"y", g.y}, {"z", g.z}, {"count", g.count}, {"mean", g.mean}});
  return {{"dim", s.dim}, {"scale", s.scale}, {"seed", s.seed}, {"subgroups", groups}};
}

// Draws each subgroup from N(mean, scale^2 I), then shuffles sample order.
// All samples start unlabeled.
inline SamplePool synthesize(const SynthSpec& spec) {
  if (spec.dim < 1) throw ConfigError("synthetic dimension must be >= 1");
  if (!(spec.scale > 0.0)) throw ConfigError("degenerate covariance scale (must be > 0)");
  int groups = 0;
  std::size_t nonzero = 0;
  for (const auto& g : spec.subgroups) {
    if (g.y != 0 && g.y != 1) throw ConfigError("synthetic subgroup label must be 0 or 1");
    if (g.z < 0) throw ConfigError("synthetic subgroup group code must be >= 0");
    if (g.mean.size() != spec.dim) throw ConfigError("synthetic subgroup mean has wrong dimension");
    groups = std::max(groups, g.z + 1);
    if (g.count > 0) ++nonzero;
  }
  if (nonzero < 2) log::warn("synthetic pool has fewer than two nonempty subgroups");
  groups = std::max(groups, 2);

  std::vector<std::string> names;
  for (std::size_t c = 0; c < spec.dim; ++c) names.push_back("x" + std::to_string(c));
  Rng rng(spec.seed, "synth");
  struct Row {
    std::vector<double> x;
    int z, y;
  };
  std::vector<Row> rows;
  for (const auto& g : spec.subgroups) {
    for (std::size_t k = 0; k < g.count; ++k) {
      Row r{std::vector<double>(spec.dim), g.z, g.y};
      for (std::size_t c = 0; c < spec.dim; ++c) r.x[c] = g.mean[c] + spec.scale * rng.normal();
      rows.push_back(std::move(r));
    }
  }
  rng.shuffle(std::span<Row>(rows));
  SamplePool pool(names, groups);
  for (const auto& r : rows) pool.add(r.x, r.z, r.y);
  return pool;
}

}  // namespace falcon
