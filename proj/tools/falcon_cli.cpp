// falcon: synth | split | run | matrix | report | serve
//
// Exit codes: 0 ok, 1 configuration error, 2 data error, 3 runtime failure.

#include <algorithm>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "falcon/falcon.hpp"
#include "falcon/label_service.hpp"

namespace fs = std::filesystem;
using namespace falcon;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> metric;
  std::optional<double> lambda;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> batch;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Run seed (matrix: first seed)");
    app->add_option("--metric", metric, "Fairness metric")->check(CLI::IsMember({"dp", "eo", "ed", "pp", "eer"}, CLI::ignore_case));
    app->add_option("--lambda", lambda, "Probability of a fairness step")->check(CLI::Range(0.0, 1.0));
    app->add_option("--budget", budget, "Labeling budget");
    app->add_option("--batch", batch, "Labels per iteration");
  }

  RunConfig apply(RunConfig c) const {
    if (seed) c.seed = *seed;
    if (metric) c.metric = parse_metric(*metric);
    if (lambda) c.lambda = *lambda;
    if (budget) c.budget = *budget;
    if (batch) c.batch = *batch;
    c.validate();
    return c;
  }
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

// Experiment configs hold {"dataset": path | object, "run": {...}}.
struct Experiment {
  json doc;
  DatasetSource dataset;
  RunConfig run;
};

Experiment load_experiment(const fs::path& path, const Overrides& o) {
  Experiment e;
  e.doc = read_json_file(path);
  if (!e.doc.is_object() || !e.doc.contains("dataset")) throw ConfigError(path.string() + ": missing \"dataset\"");
  const auto& d = e.doc.at("dataset");
  const fs::path base = path.parent_path();
  e.dataset = d.is_string() ? load_dataset(detail::resolve(base, d.get<std::string>())) : dataset_from_json(d, base);
  e.run = o.apply(run_config_from_json(e.doc.value("run", json::object())));
  return e;
}

int cmd_synth(const fs::path& config, const fs::path& out, std::optional<std::uint64_t> seed) {
  const json j = read_json_file(config);
  SynthSpec spec = synth_spec_from_json(j.contains("synth") ? j.at("synth") : j);
  if (seed) spec.seed = *seed;
  auto f = open_out(out / "pool.csv");
  write_csv(f, synthesize(spec), false);
  return 0;
}

int cmd_split(const fs::path& input, const std::optional<fs::path>& config, const std::optional<fs::path>& schema_path,
              std::uint64_t seed, const fs::path& out) {
  SplitFractions fractions;
  if (config) {
    const json j = read_json_file(*config);
    fractions = split_fractions_from_json(j.contains("split") ? j.at("split") : j);
  }
  const auto table = csv::read_file(input.string());
  const DatasetSchema schema = schema_path ? load_schema(schema_path->string()) : DatasetSource::infer_schema(table);
  SamplePool pool = load_csv(table, schema);
  for (Status s : kAllStatuses)
    if (s != Status::unlabeled) {
      for (SampleId i : pool.ids(s)) pool.set_status(i, Status::unlabeled);
    }
  pool = split(std::move(pool), fractions, seed);
  auto f = open_out(out / "split.csv");
  write_csv(f, pool, true);
  return 0;
}

int cmd_run(const fs::path& config, const fs::path& out, const Overrides& o) {
  const auto e = load_experiment(config, o);
  const SamplePool pool = e.dataset.pool_for(e.run.seed);
  fs::create_directories(out);
  auto trace_file = open_out(out / "trace.jsonl");
  RunTrace trace;
  try {
    trace = simulate(e.run, pool, [&](const StepRecord& r) {
      trace_file << to_json(r).dump() << '\n';
      trace_file.flush();
    });
  } catch (...) {
    log::error("run aborted; partial trace left in {}", (out / "trace.jsonl").string());
    throw;
  }
  auto summary = open_out(out / "summary.json");
  summary << trace.summary_json().dump(2) << '\n';
  const auto& s = trace.summary;
  std::cout << "iterations " << s.iterations << ", labels " << s.labels_charged << ", postponed "
            << s.postponed_total << ", test fairness " << fmt_opt(s.final_state.test_fairness)
            << " (initial " << fmt_opt(s.initial.test_fairness) << "), test accuracy "
            << fmt_opt(s.final_state.test_accuracy) << '\n';
  return 0;
}

int cmd_matrix(const fs::path& config, const fs::path& out, const Overrides& o, std::size_t jobs) {
  const auto e = load_experiment(config, o);
  const auto plan = matrix_from_json(e.doc, e.run);
  const auto runs = run_matrix(plan.entries, e.dataset.provider(), jobs);

  auto rf = open_out(out / "runs.csv");
  csv::write_row(rf, {"config_id", "seed", "metric", "lambda", "original_fairness", "final_fairness",
                      "final_accuracy", "postponed_total", "recalled_total", "labels_charged", "iterations"});
  for (const auto& r : runs) {
    const auto& s = r.summary;
    csv::write_row(rf, {r.config_id, std::to_string(r.config.seed), std::string(to_string(r.config.metric)),
                        format_double(r.config.lambda), fmt_opt(s.initial.test_fairness),
                        fmt_opt(s.final_state.test_fairness), fmt_opt(s.final_state.test_accuracy),
                        std::to_string(s.postponed_total), std::to_string(s.recalled_total),
                        std::to_string(s.labels_charged), std::to_string(s.iterations)});
  }

  auto sf = open_out(out / "summary.csv");
  csv::write_row(sf, {"config_id", "lambda", "metric", "runs", "fairness_mean", "fairness_std", "accuracy_mean",
                      "accuracy_std", "original_fairness_mean", "postponed_mean", "wall_seconds"});
  for (const auto& row : summarize(runs)) {
    csv::write_row(sf, {row.config_id, format_double(row.lambda), std::string(to_string(row.metric)),
                        std::to_string(row.runs), format_double(row.fairness_mean), format_double(row.fairness_std),
                        format_double(row.accuracy_mean), format_double(row.accuracy_std),
                        format_double(row.original_fairness_mean), format_double(row.postponed_mean),
                        format_double(row.wall_seconds)});
  }
  std::cout << runs.size() << " runs written to " << (out / "runs.csv").string() << '\n';
  return 0;
}

// Matrix summary -> frontier.csv sorted by accuracy; trace.jsonl -> trajectory.csv.
int cmd_report(const fs::path& input, const fs::path& out) {
  if (input.extension() == ".jsonl") {
    std::ifstream in(input);
    if (!in) throw DataError("cannot open " + input.string());
    auto f = open_out(out / "trajectory.csv");
    csv::write_row(f, {"iteration", "branch", "val_fairness", "test_fairness", "test_accuracy", "accepted",
                       "postponed", "recalled", "postponed_cumulative", "reward"});
    std::string line;
    std::size_t cumulative = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json r;
      try {
        r = json::parse(line);
      } catch (const json::parse_error& e) {
        throw DataError(input.string() + ": " + e.what());
      }
      const auto num = [&](const char* k) { return r.at(k).is_null() ? std::string() : format_double(r.at(k).get<double>()); };
      cumulative += r.at("postponed").size();
      csv::write_row(f, {std::to_string(r.at("iteration").get<std::size_t>()), r.at("branch").get<std::string>(),
                         num("val_fairness"), num("test_fairness"), num("test_accuracy"),
                         std::to_string(r.at("accepted").size()), std::to_string(r.at("postponed").size()),
                         std::to_string(r.at("recalled").size()), std::to_string(cumulative), num("reward")});
    }
    return 0;
  }

  const auto table = csv::read_file(input.string());
  const auto id = table.column("config_id");
  const auto lam = table.column("lambda");
  const auto metric = table.column("metric");
  const auto fm = table.column("fairness_mean");
  const auto fsd = table.column("fairness_std");
  const auto am = table.column("accuracy_mean");
  const auto asd = table.column("accuracy_std");
  struct Point {
    const csv::Row* row;
    double accuracy, fairness;
  };
  std::vector<Point> pts;
  for (const auto& row : table.rows) pts.push_back({&row, parse_double(row[am]), parse_double(row[fm])});
  std::stable_sort(pts.begin(), pts.end(), [](const Point& a, const Point& b) { return a.accuracy < b.accuracy; });
  auto f = open_out(out / "frontier.csv");
  csv::write_row(f, {"config_id", "lambda", "metric", "accuracy_mean", "accuracy_std", "fairness_mean",
                     "fairness_std", "pareto"});
  for (const auto& p : pts) {
    bool dominated = false;
    for (const auto& q : pts)
      if (q.accuracy >= p.accuracy && q.fairness >= p.fairness && (q.accuracy > p.accuracy || q.fairness > p.fairness))
        dominated = true;
    const auto& r = *p.row;
    csv::write_row(f, {r[id], r[lam], r[metric], r[am], r[asd], r[fm], r[fsd], dominated ? "0" : "1"});
  }
  return 0;
}

service::LabelServer* g_server = nullptr;

int cmd_serve(const fs::path& config, std::optional<std::string> host, std::optional<int> port,
              std::optional<std::string> static_dir) {
  const json j = read_json_file(config);
  const fs::path base = config.parent_path();
  std::optional<fs::path> state;
  if (j.contains("state_dir")) state = detail::resolve(base, j.at("state_dir").get<std::string>());
  service::SessionManager manager(state);
  if (!j.contains("datasets") || !j.at("datasets").is_object()) throw ConfigError("serve config needs \"datasets\"");
  for (auto it = j.at("datasets").begin(); it != j.at("datasets").end(); ++it) {
    const auto& d = it.value();
    const auto src = d.is_string() ? load_dataset(detail::resolve(base, d.get<std::string>())) : dataset_from_json(d, base);
    manager.register_dataset(it.key(), src.provider());
  }
  const auto restored = manager.restore();
  if (!restored.empty()) log::info("restored {} session(s)", restored.size());
  if (!static_dir && j.contains("static_dir")) static_dir = detail::resolve(base, j.at("static_dir").get<std::string>());
  service::LabelServer server(manager, static_dir);
  const std::string h = host.value_or(j.value("host", std::string("127.0.0.1")));
  const int p = port.value_or(j.value("port", 8080));
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::cerr << "listening on http://" << h << ':' << p << '\n';
  if (!server.listen(h, p)) throw std::runtime_error("cannot listen on " + h + ":" + std::to_string(p));
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fair active learning with trial-and-error labeling and bandit policy search"};
  app.require_subcommand(1);

  fs::path config, out = ".", input;
  std::optional<fs::path> opt_config, schema;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  Overrides overrides;
  std::optional<std::string> host, static_dir;
  std::optional<int> port;

  auto* synth = app.add_subcommand("synth", "Write a synthetic pool CSV from a spec");
  synth->add_option("--config", config, "Synthetic spec or dataset JSON")->required();
  synth->add_option("--out", out, "Output directory");
  synth->add_option("--seed", seed, "Override the synthesis seed");

  std::uint64_t split_seed = 0;
  auto* splitc = app.add_subcommand("split", "Add a stratified split column to a CSV");
  splitc->add_option("input", input, "Input CSV")->required();
  splitc->add_option("--config", opt_config, "Split fractions JSON");
  splitc->add_option("--schema", schema, "Schema JSON (default: columns other than z, y are numeric)");
  splitc->add_option("--seed", split_seed, "Split seed");
  splitc->add_option("--out", out, "Output directory");

  auto* runc = app.add_subcommand("run", "Run one simulated labeling session");
  runc->add_option("--config", config, "Experiment JSON")->required();
  runc->add_option("--out", out, "Output directory");
  overrides.add_to(runc);

  auto* matrix = app.add_subcommand("matrix", "Run configs x seeds and summarize");
  matrix->add_option("--config", config, "Matrix JSON")->required();
  matrix->add_option("--out", out, "Output directory");
  matrix->add_option("--jobs", jobs, "Parallel runs")->check(CLI::PositiveNumber);
  overrides.add_to(matrix);

  auto* report = app.add_subcommand("report", "Turn matrix or trace output into plot-ready CSV");
  report->add_option("input", input, "summary.csv or trace.jsonl")->required();
  report->add_option("--out", out, "Output directory");

  auto* serve = app.add_subcommand("serve", "Start the HTTP labeling service");
  serve->add_option("--config", config, "Service JSON")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--static", static_dir, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) return cmd_synth(config, out, seed);
    if (*splitc) return cmd_split(input, opt_config, schema, split_seed, out);
    if (*runc) return cmd_run(config, out, overrides);
    if (*matrix) return cmd_matrix(config, out, overrides, jobs);
    if (*report) return cmd_report(input, out);
    if (*serve) return cmd_serve(config, host, port, static_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 3;
}
