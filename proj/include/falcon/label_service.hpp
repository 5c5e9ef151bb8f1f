#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "falcon/engine.hpp"
#include "falcon/error.hpp"
#include "falcon/experiment.hpp"
#include "falcon/log.hpp"

namespace falcon::service {

enum class Phase { awaiting_labels, computing, finished };

constexpr std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::awaiting_labels: return "awaiting_labels";
    case Phase::computing: return "computing";
    case Phase::finished: return "finished";
  }
  return "?";
}

// Carries the HTTP status and the machine-readable code of the error body.
struct ApiError : std::runtime_error {
  int status;
  std::string code;
  ApiError(int s, std::string c, const std::string& message) : std::runtime_error(message), status(s), code(std::move(c)) {}
};

inline json error_body(std::string_view code, std::string_view message) {
  return {{"code", code}, {"message", message}};
}

// One labeling session: an engine plus the log of every submitted batch.
// `phase` is advanced with compare-and-swap so exactly one of two concurrent
// submissions for the same batch wins; `mu` serializes engine access.
class Session {
 public:
  Session(std::string id, std::string dataset, RunConfig config, SamplePool pool)
      : id_(std::move(id)), dataset_(std::move(dataset)), engine_(std::move(config), std::move(pool)) {
    advance();
  }

  const std::string& id() const { return id_; }
  const std::string& dataset() const { return dataset_; }
  Phase phase() const { return phase_.load(); }

  json batch() const {
    if (phase_.load() != Phase::awaiting_labels)
      throw ApiError(409, "wrong_phase", "session " + id_ + " is " + std::string(to_string(phase_.load())));
    std::lock_guard lock(mu_);
    return batch_locked();
  }

  json submit(const json& body) {
    auto expected = Phase::awaiting_labels;
    if (!phase_.compare_exchange_strong(expected, Phase::computing))
      throw ApiError(409, "wrong_phase", "session " + id_ + " is " + std::string(to_string(expected)));
    std::lock_guard lock(mu_);
    std::vector<int> labels;
    try {
      labels = parse_labels(body);
    } catch (...) {
      phase_.store(Phase::awaiting_labels);
      throw;
    }
    try {
      const auto rec = engine_.submit(labels);
      log_.push_back(labels);
      if (on_step_) on_step_(*this);
      advance();
      json out = {{"session", id_},
                  {"record", to_json(rec)},
                  {"accepted", rec.accepted},
                  {"postponed", rec.postponed},
                  {"val_fairness", rec.val_fairness},
                  {"phase", to_string(phase_.load())}};
      if (phase_.load() == Phase::finished) out["summary"] = to_json(engine_.trace().summary);
      return out;
    } catch (...) {
      phase_.store(engine_.has_pending() ? Phase::awaiting_labels : Phase::finished);
      throw;
    }
  }

  json status() const {
    std::lock_guard lock(mu_);
    const auto& s = engine_.trace().summary;
    json out = {{"id", id_},
                {"dataset", dataset_},
                {"phase", to_string(phase_.load())},
                {"metric", to_string(engine_.config().metric)},
                {"iteration", engine_.trace().records.size()},
                {"budget", engine_.config().budget},
                {"budget_remaining", engine_.budget_remaining()},
                {"labels_charged", engine_.labels_charged()},
                {"trajectory", engine_.trajectory()},
                {"postponed_now", engine_.pool().count(Status::postponed)},
                {"postponed_total", s.postponed_total},
                {"recalled_total", s.recalled_total},
                {"validation", to_json(engine_.validation_report())},
                {"bandit", engine_.bandit_snapshot()},
                {"batch_id", engine_.has_pending() ? json(engine_.query_if_pending()->iteration) : json(nullptr)}};
    const auto& fin = s.final_state;
    out["test"] = fin.test_fairness || fin.test_accuracy
                      ? json{{"fairness", detail::opt(fin.test_fairness)}, {"accuracy", detail::opt(fin.test_accuracy)}}
                      : json(nullptr);
    if (phase_.load() == Phase::finished) out["summary"] = to_json(s);
    return out;
  }

  json trace() const {
    std::lock_guard lock(mu_);
    const auto& t = engine_.trace();
    json records = json::array();
    for (const auto& r : t.records) records.push_back(to_json(r));
    return {{"session", id_}, {"config", to_json(t.config)}, {"records", records}, {"summary", to_json(t.summary)}};
  }

  // Engine access for persistence and tests; callers hold no other lock.
  RunTrace trace_copy() const {
    std::lock_guard lock(mu_);
    return engine_.trace();
  }
  const std::vector<std::vector<int>>& label_log() const { return log_; }
  const RunConfig& config() const { return engine_.config(); }
  // For callers that already hold the session's lock (the on-step hook).
  std::string unlocked_trace_jsonl() const { return engine_.trace().jsonl(); }

  void set_on_step(std::function<void(const Session&)> f) { on_step_ = std::move(f); }

  // Re-applies previously logged batches, checking that the engine asks for
  // the same number of labels it did originally.
  void replay(const std::vector<std::vector<int>>& batches) {
    for (const auto& labels : batches) {
      if (phase_.load() != Phase::awaiting_labels) throw DataError("session log is longer than the run");
      const auto& q = engine_.query();
      if (q.ids.size() != labels.size()) throw DataError("session log does not match the engine's batches");
      engine_.submit(labels);
      log_.push_back(labels);
      advance();
    }
  }

 private:
  void advance() {
    if (engine_.finished()) {
      phase_.store(Phase::finished);
      return;
    }
    try {
      engine_.query();
      phase_.store(Phase::awaiting_labels);
    } catch (const std::logic_error&) {
      phase_.store(Phase::finished);
    }
  }

  json batch_locked() const {
    const Query& q = *engine_.query_if_pending();
    const auto& pool = engine_.pool();
    json samples = json::array();
    for (SampleId i : q.ids) {
      const auto f = pool.features(i);
      samples.push_back({{"id", i}, {"z", pool.group(i)}, {"features", std::vector<double>(f.begin(), f.end())}});
    }
    json policy = nullptr;
    if (q.policy) policy = {{"y", q.policy->target.y}, {"z", q.policy->target.z}, {"r", q.policy->r}};
    json targets = json::array();
    for (const auto& t : q.targets) targets.push_back(to_json(t));
    return {{"session", id_},
            {"batch_id", q.iteration},
            {"iteration", q.iteration},
            {"branch", to_string(q.branch)},
            {"metric", to_string(engine_.config().metric)},
            {"pair", {q.pair.first, q.pair.second}},
            {"targets", q.branch == Branch::fairness ? targets : json::array()},
            {"policy", policy},
            {"arm", q.arm ? json(*q.arm) : json(nullptr)},
            {"rationale", q.rationale(engine_.config().metric)},
            {"feature_names", pool.feature_names()},
            {"samples", samples}};
  }

  // Accepts {"batch_id": n, "labels": {"<id>": 0|1, ...}} or
  // {"labels": [{"id": n, "label": 0|1}, ...]}; returns labels in batch order.
  std::vector<int> parse_labels(const json& body) const {
    const Query& q = *engine_.query_if_pending();
    if (!body.is_object() || !body.contains("labels"))
      throw ApiError(400, "bad_request", "body must be an object with a \"labels\" field");
    if (body.contains("batch_id") && !body.at("batch_id").is_null()) {
      if (!body.at("batch_id").is_number_integer() || body.at("batch_id").get<std::size_t>() != q.iteration)
        throw ApiError(409, "stale_batch", "batch_id does not match the pending batch " + std::to_string(q.iteration));
    }
    std::map<SampleId, int> given;
    const auto put = [&](const json& id, const json& label) {
      SampleId sid = 0;
      if (id.is_string()) {
        try {
          std::size_t used = 0;
          sid = std::stoul(id.get<std::string>(), &used);
          if (used != id.get<std::string>().size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw ApiError(422, "invalid_labels", "sample id '" + id.get<std::string>() + "' is not an integer");
        }
      } else if (id.is_number_unsigned() || (id.is_number_integer() && id.get<long long>() >= 0)) {
        sid = id.get<SampleId>();
      } else {
        throw ApiError(422, "invalid_labels", "sample ids must be non-negative integers");
      }
      if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1))
        throw ApiError(422, "invalid_labels", "label for sample " + std::to_string(sid) + " must be 0 or 1");
      if (!given.emplace(sid, label.get<int>()).second)
        throw ApiError(422, "invalid_labels", "duplicate label for sample " + std::to_string(sid));
    };
    const auto& l = body.at("labels");
    if (l.is_object()) {
      for (auto it = l.begin(); it != l.end(); ++it) put(json(it.key()), it.value());
    } else if (l.is_array()) {
      for (const auto& e : l) {
        if (!e.is_object() || !e.contains("id") || !e.contains("label"))
          throw ApiError(422, "invalid_labels", "label entries need \"id\" and \"label\"");
        put(e.at("id"), e.at("label"));
      }
    } else {
      throw ApiError(400, "bad_request", "\"labels\" must be an object or an array");
    }
    const std::set<SampleId> wanted(q.ids.begin(), q.ids.end());
    std::vector<SampleId> missing, extra;
    for (SampleId i : q.ids)
      if (!given.count(i)) missing.push_back(i);
    for (const auto& [i, _] : given)
      if (!wanted.count(i)) extra.push_back(i);
    if (!missing.empty() || !extra.empty()) {
      json detail = {{"missing", missing}, {"extra", extra}};
      throw ApiError(422, "label_mismatch", "labels must cover exactly the pending ids: " + detail.dump());
    }
    std::vector<int> out;
    out.reserve(q.ids.size());
    for (SampleId i : q.ids) out.push_back(given.at(i));
    return out;
  }

  std::string id_;
  std::string dataset_;
  Engine engine_;
  std::atomic<Phase> phase_{Phase::awaiting_labels};
  mutable std::mutex mu_;
  std::vector<std::vector<int>> log_;
  std::function<void(const Session&)> on_step_;
};

// Registered datasets, live sessions and their on-disk state. A session is
// persisted as session.json (config plus every submitted label batch) and
// trace.jsonl after each step; restore() rebuilds it by replaying the log,
// which is exact because runs are deterministic.
class SessionManager {
 public:
  explicit SessionManager(std::optional<std::filesystem::path> state_dir = std::nullopt)
      : state_dir_(std::move(state_dir)) {
    if (state_dir_) std::filesystem::create_directories(*state_dir_);
  }

  void register_dataset(const std::string& name, PoolProvider provider) {
    std::unique_lock lock(mu_);
    datasets_[name] = std::move(provider);
  }

  void register_pool(const std::string& name, SamplePool pool) {
    register_dataset(name, [pool = std::move(pool)](std::uint64_t) { return pool; });
  }

  std::vector<std::string> datasets() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : datasets_) out.push_back(k);
    return out;
  }

  std::vector<std::string> sessions() const {
    std::shared_lock lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : sessions_) out.push_back(k);
    return out;
  }

  // {"dataset": name, "config": {...run config...}}
  json create(const json& body) {
    if (!body.is_object()) throw ApiError(400, "bad_request", "body must be a JSON object");
    if (!body.contains("dataset") || !body.at("dataset").is_string())
      throw ApiError(400, "bad_request", "\"dataset\" (string) is required");
    const std::string dataset = body.at("dataset").get<std::string>();
    RunConfig config;
    try {
      config = run_config_from_json(body.value("config", json::object()));
    } catch (const ConfigError& e) {
      throw ApiError(400, "invalid_config", e.what());
    }
    const PoolProvider provider = find_dataset(dataset);
    SamplePool pool = provider(config.seed);
    const auto unlabeled = pool.count(Status::unlabeled);
    if (config.batch > unlabeled)
      throw ApiError(400, "invalid_config", "batch " + std::to_string(config.batch) + " exceeds the " +
                                                std::to_string(unlabeled) + " unlabeled samples");
    std::string id;
    {
      std::unique_lock lock(mu_);
      id = "s" + std::to_string(++counter_);
    }
    std::shared_ptr<Session> session;
    try {
      session = std::make_shared<Session>(id, dataset, config, std::move(pool));
    } catch (const ConfigError& e) {
      throw ApiError(400, "invalid_config", e.what());
    } catch (const DataError& e) {
      throw ApiError(400, "invalid_dataset", e.what());
    }
    attach(session);
    persist(*session);
    return {{"id", id}, {"phase", to_string(session->phase())}, {"dataset", dataset}, {"config", to_json(config)}};
  }

  std::shared_ptr<Session> get(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw ApiError(404, "not_found", "unknown session " + id);
    return it->second;
  }

  // Rebuilds every session found under the state directory. Returns the ids.
  std::vector<std::string> restore() {
    std::vector<std::string> restored;
    if (!state_dir_) return restored;
    for (const auto& entry : std::filesystem::directory_iterator(*state_dir_)) {
      const auto file = entry.path() / "session.json";
      if (!entry.is_directory() || !std::filesystem::exists(file)) continue;
      try {
        const json j = read_json_file(file);
        const std::string id = j.at("id").get<std::string>();
        const std::string dataset = j.at("dataset").get<std::string>();
        const RunConfig config = run_config_from_json(j.at("config"));
        auto session = std::make_shared<Session>(id, dataset, config, find_dataset(dataset)(config.seed));
        session->replay(j.at("labels").get<std::vector<std::vector<int>>>());
        attach(session);
        restored.push_back(id);
        std::unique_lock lock(mu_);
        if (id.size() > 1 && id[0] == 's') {
          try {
            counter_ = std::max<std::uint64_t>(counter_, std::stoull(id.substr(1)));
          } catch (const std::exception&) {
          }
        }
      } catch (const std::exception& e) {
        log::error("cannot restore session from {}: {}", file.string(), e.what());
      }
    }
    return restored;
  }

 private:
  PoolProvider find_dataset(const std::string& name) const {
    std::shared_lock lock(mu_);
    auto it = datasets_.find(name);
    if (it == datasets_.end()) throw ApiError(404, "not_found", "unknown dataset " + name);
    return it->second;
  }

  void attach(const std::shared_ptr<Session>& s) {
    s->set_on_step([this](const Session& sess) { persist(sess); });
    std::unique_lock lock(mu_);
    sessions_[s->id()] = s;
  }

  // Called with the session's engine lock held (from submit) or before the
  // session is published, so it reads the engine without locking again.
  void persist(const Session& s) const {
    if (!state_dir_) return;
    const auto dir = *state_dir_ / s.id();
    std::filesystem::create_directories(dir);
    const json j = {{"id", s.id()}, {"dataset", s.dataset()}, {"config", to_json(s.config())}, {"labels", s.label_log()}};
    write_atomically(dir / "session.json", j.dump(2) + "\n");
    write_atomically(dir / "trace.jsonl", s.unlocked_trace_jsonl());
  }

  static void write_atomically(const std::filesystem::path& path, const std::string& content) {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw std::runtime_error("cannot write " + tmp);
      out << content;
    }
    std::filesystem::rename(tmp, path);
  }

  std::optional<std::filesystem::path> state_dir_;
  mutable std::shared_mutex mu_;
  std::map<std::string, PoolProvider> datasets_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

// HTTP front end over a SessionManager.
class LabelServer {
 public:
  explicit LabelServer(SessionManager& sessions, std::optional<std::string> static_dir = std::nullopt)
      : sessions_(sessions) {
    if (static_dir && !server_.set_mount_point("/", *static_dir))
      throw ConfigError("static directory " + *static_dir + " does not exist");
    routes();
  }

  ~LabelServer() { stop(); }

  // Blocks until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  // Binds an ephemeral port and serves from a background thread.
  int start_background(const std::string& host = "127.0.0.1") {
    const int port = server_.bind_to_any_port(host);
    if (port < 0) throw std::runtime_error("cannot bind " + host);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port;
  }

  void stop() {
    if (server_.is_running()) server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  using Handler = std::function<std::pair<int, json>(const httplib::Request&)>;

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::parse_error& e) {
      throw ApiError(400, "bad_request", std::string("invalid JSON: ") + e.what());
    }
  }

  static httplib::Server::Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        auto [status, body] = h(req);
        reply(res, status, body);
      } catch (const ApiError& e) {
        reply(res, e.status, error_body(e.code, e.what()));
      } catch (const std::exception& e) {
        log::error("{} {}: {}", req.method, req.path, e.what());
        reply(res, 500, error_body("internal", e.what()));
      }
    };
  }

  void routes() {
    server_.Get("/datasets", wrap([this](const httplib::Request&) {
                  return std::pair{200, json{{"datasets", sessions_.datasets()}}};
                }));
    server_.Get("/sessions", wrap([this](const httplib::Request&) {
                  return std::pair{200, json{{"sessions", sessions_.sessions()}}};
                }));
    server_.Post("/sessions", wrap([this](const httplib::Request& req) {
                   return std::pair{201, sessions_.create(parse_body(req))};
                 }));
    server_.Get(R"(/sessions/([^/]+)/batch)", wrap([this](const httplib::Request& req) {
                  return std::pair{200, sessions_.get(req.matches[1])->batch()};
                }));
    server_.Post(R"(/sessions/([^/]+)/labels)", wrap([this](const httplib::Request& req) {
                   auto s = sessions_.get(req.matches[1]);
                   return std::pair{200, s->submit(parse_body(req))};
                 }));
    server_.Get(R"(/sessions/([^/]+)/status)", wrap([this](const httplib::Request& req) {
                  return std::pair{200, sessions_.get(req.matches[1])->status()};
                }));
    server_.Get(R"(/sessions/([^/]+)/trace)", wrap([this](const httplib::Request& req) {
                  return std::pair{200, sessions_.get(req.matches[1])->trace()};
                }));
  }

  SessionManager& sessions_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace falcon::service
