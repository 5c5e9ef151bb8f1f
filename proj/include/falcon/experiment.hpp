#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "falcon/data.hpp"
#include "falcon/engine.hpp"
#include "falcon/error.hpp"

namespace falcon {

// Where a run's pool comes from: a synthetic spec or a CSV plus schema,
// split per run seed unless the CSV already carries a split column.
struct DatasetSource {
  std::optional<SynthSpec> synth;
  std::string csv_path;
  std::optional<DatasetSchema> schema;
  SplitFractions fractions;
  std::uint64_t split_seed = 0;
  // Offset the synthesis and split seeds by the run seed, so every seed of a
  // matrix sees a fresh draw of the dataset.
  bool reseed = true;

  SamplePool pool_for(std::uint64_t run_seed) const {
    const std::uint64_t offset = reseed ? run_seed : 0;
    SamplePool pool = [&] {
      if (synth) {
        SynthSpec s = *synth;
        s.seed += offset;
        return synthesize(s);
      }
      if (csv_path.empty()) throw ConfigError("dataset needs either \"synth\" or \"csv\"");
      const auto table = csv::read_file(csv_path);
      return load_csv(table, schema ? *schema : infer_schema(table));
    }();
    if (pool.count(Status::train) > 0) return pool;
    return split(std::move(pool), fractions, split_seed + offset);
  }

  PoolProvider provider() const {
    return [src = *this](std::uint64_t seed) { return src.pool_for(seed); };
  }

  // Tables written by write_csv: every column except z, y and split is a
  // numeric feature, z holds integer codes, y holds 0/1.
  static DatasetSchema infer_schema(const csv::Table& table) {
    DatasetSchema s;
    s.sensitive_column.name = "z";
    s.label_column.name = "y";
    const std::size_t zc = table.column("z");
    int groups = 2;
    for (const auto& row : table.rows) {
      try {
        groups = std::max(groups, std::stoi(row[zc]) + 1);
      } catch (const std::exception&) {
        throw DataError("column z must hold integer group codes, got '" + row[zc] + "'");
      }
    }
    for (int z = 0; z < groups; ++z) s.sensitive_column.codes[std::to_string(z)] = z;
    for (const auto& h : table.header)
      if (h != "z" && h != "y" && h != s.split_column) s.feature_columns.push_back({h, FeatureColumn::Kind::numeric, {}});
    return s;
  }
};

namespace detail {
inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path.string() : (base / path).string();
}
}  // namespace detail

// {"synth": spec | "path.json", "csv": "path", "schema": schema | "path.json",
//  "split": {...}, "split_seed": n, "reseed": bool}. Relative paths resolve
// against `base_dir`. A bare SynthSpec (with "subgroups") is also accepted.
inline DatasetSource dataset_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ConfigError("dataset must be a JSON object");
  DatasetSource d;
  if (j.contains("subgroups")) {
    d.synth = synth_spec_from_json(j);
    return d;
  }
  try {
    if (j.contains("synth")) {
      const auto& s = j.at("synth");
      d.synth = synth_spec_from_json(s.is_string() ? detail::read_json_file(detail::resolve(base_dir, s.get<std::string>()))
                                                   : s);
    }
    if (j.contains("csv")) d.csv_path = detail::resolve(base_dir, j.at("csv").get<std::string>());
    if (j.contains("schema")) {
      const auto& s = j.at("schema");
      d.schema = schema_from_json(s.is_string() ? detail::read_json_file(detail::resolve(base_dir, s.get<std::string>()))
                                                : s);
    }
    if (j.contains("split")) d.fractions = split_fractions_from_json(j.at("split"));
    d.split_seed = j.value("split_seed", d.split_seed);
    d.reseed = j.value("reseed", d.reseed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid dataset: ") + e.what());
  }
  if (d.synth && !d.csv_path.empty()) throw ConfigError("dataset must not set both \"synth\" and \"csv\"");
  if (!d.synth && d.csv_path.empty()) throw ConfigError("dataset needs either \"synth\" or \"csv\"");
  return d;
}

inline DatasetSource load_dataset(const std::filesystem::path& path) {
  return dataset_from_json(detail::read_json_file(path), path.parent_path());
}

inline json read_json_file(const std::filesystem::path& p) { return detail::read_json_file(p); }

// Matrix description: a base run config, named variants that override it,
// optional lambda / metric grids crossed with every variant, and seeds.
struct MatrixPlan {
  std::vector<MatrixEntry> entries;
};

inline MatrixPlan matrix_from_json(const json& j, const RunConfig& base) {
  struct Variant {
    std::string id;
    RunConfig config;
  };
  std::vector<Variant> variants;
  try {
    if (j.contains("configs")) {
      for (const auto& v : j.at("configs")) {
        json overrides = v;
        const std::string id = v.at("id").get<std::string>();
        overrides.erase("id");
        variants.push_back({id, run_config_from_json(overrides, base)});
      }
    } else {
      variants.push_back({"base", base});
    }
    std::vector<std::uint64_t> seeds;
    const auto& s = j.contains("seeds") ? j.at("seeds") : json(10);
    if (s.is_number_integer()) {
      for (std::uint64_t k = 0; k < s.get<std::uint64_t>(); ++k) seeds.push_back(base.seed + k);
    } else {
      seeds = s.get<std::vector<std::uint64_t>>();
    }
    if (seeds.empty()) throw ConfigError("matrix needs at least one seed");

    std::vector<std::optional<double>> lambdas{std::nullopt};
    if (j.contains("lambda_grid")) {
      lambdas.clear();
      for (double l : j.at("lambda_grid").get<std::vector<double>>()) lambdas.emplace_back(l);
    }
    std::vector<std::optional<FairnessMetric>> metrics{std::nullopt};
    if (j.contains("metric_grid")) {
      metrics.clear();
      for (const auto& m : j.at("metric_grid").get<std::vector<std::string>>()) metrics.emplace_back(parse_metric(m));
    }

    MatrixPlan plan;
    for (const auto& v : variants) {
      for (const auto& m : metrics) {
        for (const auto& l : lambdas) {
          RunConfig c = v.config;
          std::string id = v.id;
          if (m) {
            c.metric = *m;
            id += "/metric=" + std::string(to_string(*m));
          }
          if (l) {
            c.lambda = *l;
            id += "/lambda=" + format_double(*l);
          }
          c.validate();
          for (auto seed : seeds) {
            c.seed = seed;
            plan.entries.push_back({id, c});
          }
        }
      }
    }
    return plan;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid matrix config: ") + e.what());
  }
}

}  // namespace falcon
