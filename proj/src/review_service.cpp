#include "cdq/review_service.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "cdq/decisions.hpp"
#include "cdq/io.hpp"
#include "cdq/pipeline.hpp"

namespace cdq {

namespace {

struct BadRequest : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Artifacts {
  std::string run_id;
  Json report = Json::object();
  std::vector<AnomalyRecord> records;
  std::map<std::string, std::size_t> by_id;
  std::map<std::pair<SourceId, Metric>, Panel> canonical;
  std::map<std::pair<SourceId, Metric>, Panel> repaired;
};

Artifacts read_artifacts(const PipelineConfig& cfg) {
  Artifacts a;
  a.report = Json::parse(io::read_file(run_report_path(cfg.out_dir)));
  a.run_id = a.report.value("run_id", std::string());
  if (std::filesystem::exists(anomalies_path(cfg.out_dir))) {
    std::ifstream in(anomalies_path(cfg.out_dir));
    a.records = read_anomalies_jsonl(in);
  }
  std::stable_sort(a.records.begin(), a.records.end(), [](const AnomalyRecord& x, const AnomalyRecord& y) {
    if (x.date != y.date) return x.date < y.date;
    if (!(x.key == y.key)) return x.key < y.key;
    return x.id < y.id;
  });
  for (std::size_t i = 0; i < a.records.size(); ++i) a.by_id[a.records[i].id] = i;
  for (auto s : cfg.sources) {
    for (auto m : cfg.metrics) {
      if (auto p = canonical_path(cfg.out_dir, s, m, cfg.level); std::filesystem::exists(p)) {
        a.canonical[{s, m}] = read_canonical(p, s, m);
      }
      if (auto p = repaired_path(cfg.out_dir, s, m, cfg.level); std::filesystem::exists(p)) {
        a.repaired[{s, m}] = read_canonical(p, s, m);
      }
    }
  }
  return a;
}

AnomalyStatus current_status(const AnomalyRecord& r, const DecisionLog& log) {
  if (r.status == AnomalyStatus::Repaired) return r.status;
  if (auto it = log.effective.find(r.id); it != log.effective.end()) return status_after(it->second);
  return r.status;
}

Json vector_json(const VectorXd& v) { return std::vector<double>(v.begin(), v.end()); }

void check_params(const httplib::Request& req, std::initializer_list<std::string_view> allowed) {
  for (const auto& [name, _] : req.params) {
    if (std::find(allowed.begin(), allowed.end(), name) == allowed.end()) {
      throw BadRequest("unknown query parameter '" + name + "'");
    }
  }
}

std::optional<std::string> param(const httplib::Request& req, const std::string& name) {
  if (!req.has_param(name)) return std::nullopt;
  return req.get_param_value(name);
}

long long parse_count(const std::string& name, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long n = std::stoll(v, &used);
    if (used != v.size() || n < 0) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw BadRequest(name + " must be a nonnegative integer");
  }
}

template <typename Fn>
auto as_bad_request(Fn&& fn) {
  try {
    return fn();
  } catch (const std::invalid_argument& e) {
    throw BadRequest(e.what());
  }
}

}  // namespace

struct ReviewService::Impl {
  PipelineConfig cfg;
  httplib::Server server;
  mutable std::shared_mutex state_mutex;
  std::mutex writer;
  Artifacts art;

  std::atomic<bool> busy{false};
  std::mutex rerun_mutex;
  std::condition_variable rerun_done;
  std::thread rerun_thread;
  std::string rerun_state = "idle";
  std::string rerun_error;

  explicit Impl(PipelineConfig c) : cfg(std::move(c)) { routes(); }

  ~Impl() {
    if (rerun_thread.joinable()) rerun_thread.join();
  }

  void send(httplib::Response& res, int status, Json body, const std::string& run_id) {
    body["run_id"] = run_id;
    res.status = status;
    res.set_header("X-Run-Id", run_id);
    res.set_content(body.dump(), "application/json");
  }

  void error(httplib::Response& res, int status, const std::string& message) {
    send(res, status, Json{{"error", message}}, snapshot_run_id());
  }

  std::string snapshot_run_id() const {
    std::shared_lock lock(state_mutex);
    return art.run_id;
  }

  template <typename Fn>
  void handle(httplib::Response& res, Fn&& fn) {
    try {
      fn();
    } catch (const BadRequest& e) {
      error(res, 400, e.what());
    } catch (const std::exception& e) {
      error(res, 500, e.what());
    }
  }

  Json record_json(const AnomalyRecord& r, const DecisionLog& log) const {
    auto j = to_json(r);
    j["status"] = to_string(current_status(r, log));
    return j;
  }

  void routes() {
    server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (cfg.review_token.empty() || req.path.rfind("/api/", 0) != 0) return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") == "Bearer " + cfg.review_token) {
        return httplib::Server::HandlerResponse::Unhandled;
      }
      error(res, 401, "missing or wrong bearer token");
      return httplib::Server::HandlerResponse::Handled;
    });
    if (!cfg.review_static_dir.empty()) server.set_mount_point("/", cfg.review_static_dir.string());

    server.Get("/api/anomalies", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { list_anomalies(req, res); });
    });
    server.Get(R"(/api/series/([^/]+)/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { series(req, res); });
    });
    server.Post(R"(/api/anomalies/([^/]+)/decision)", [this](const httplib::Request& req, httplib::Response& res) {
      handle(res, [&] { decide(req, res); });
    });
    server.Post("/api/pipeline/rerun", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] { rerun(res); });
    });
    server.Get("/api/pipeline/status", [this](const httplib::Request&, httplib::Response& res) {
      handle(res, [&] { status(res); });
    });
  }

  void list_anomalies(const httplib::Request& req, httplib::Response& res) {
    check_params(req, {"status", "kind", "state", "source", "metric", "key", "limit", "offset"});
    std::optional<AnomalyStatus> status;
    std::optional<AnomalyKind> kind;
    std::optional<SourceId> source;
    std::optional<Metric> metric;
    std::optional<std::string> state = param(req, "state");
    std::optional<std::string> key = param(req, "key");
    if (auto v = param(req, "status")) status = as_bad_request([&] { return parse_anomaly_status(*v); });
    if (auto v = param(req, "kind")) kind = as_bad_request([&] { return parse_anomaly_kind(*v); });
    if (auto v = param(req, "source")) source = as_bad_request([&] { return parse_source_id(*v); });
    if (auto v = param(req, "metric")) metric = as_bad_request([&] { return parse_metric(*v); });
    if (state && !state_fips(*state)) throw BadRequest("unknown state '" + *state + "'");
    const long long limit = std::min<long long>(500, param(req, "limit") ? parse_count("limit", *param(req, "limit")) : 100);
    const long long offset = param(req, "offset") ? parse_count("offset", *param(req, "offset")) : 0;

    const auto log = read_decisions(cfg.decision_log);
    std::shared_lock lock(state_mutex);
    Json items = Json::array();
    long long total = 0;
    for (const auto& r : art.records) {
      const auto st = current_status(r, log);
      if (status && st != *status) continue;
      if (kind && r.kind != *kind) continue;
      if (source && r.source != *source) continue;
      if (metric && r.metric != *metric) continue;
      if (state && r.key.state != *state) continue;
      if (key && r.key.id() != *key) continue;
      if (total >= offset && total < offset + limit) items.push_back(record_json(r, log));
      ++total;
    }
    send(res, 200, Json{{"total", total}, {"offset", offset}, {"limit", limit}, {"items", items}}, art.run_id);
  }

  void series(const httplib::Request& req, httplib::Response& res) {
    check_params(req, {"source"});
    const std::string key_id = req.matches[1];
    const Metric metric = as_bad_request([&] { return parse_metric(std::string(req.matches[2])); });
    std::optional<SourceId> source;
    if (auto v = param(req, "source")) source = as_bad_request([&] { return parse_source_id(*v); });

    const auto log = read_decisions(cfg.decision_log);
    std::shared_lock lock(state_mutex);
    const Panel* panel = nullptr;
    std::optional<Index> row;
    for (auto s : cfg.sources) {
      if (source && s != *source) continue;
      auto it = art.canonical.find({s, metric});
      if (it == art.canonical.end()) continue;
      for (Index i = 0; i < it->second.locations(); ++i) {
        if (it->second.keys[static_cast<std::size_t>(i)].id() == key_id) {
          panel = &it->second;
          row = i;
          break;
        }
      }
      if (panel) break;
    }
    if (!panel) {
      error(res, 404, "no series '" + key_id + "' for " + std::string(to_string(metric)));
      return;
    }
    const auto y = panel->series(*row);
    Json body;
    body["key"] = to_json(y.key);
    body["metric"] = to_string(metric);
    body["source"] = to_string(y.source);
    body["start"] = format_iso_date(y.start);
    body["raw"] = vector_json(y.values);
    body["increments"] = vector_json(to_increments(y.values));
    if (auto it = art.repaired.find({y.source, metric}); it != art.repaired.end()) {
      if (auto r = it->second.find(y.key)) body["repaired"] = vector_json(it->second.counts.row(*r).transpose());
    }

    Json markers = Json::array();
    DecisionLog pending = log;
    std::vector<std::string> pending_ids;
    for (const auto& r : art.records) {
      if (!(r.key == y.key) || r.metric != metric || r.source != y.source) continue;
      const auto st = current_status(r, log);
      markers.push_back({{"id", r.id},
                         {"kind", to_string(r.kind)},
                         {"t_index", r.t_index},
                         {"date", format_iso_date(r.date)},
                         {"magnitude", r.magnitude},
                         {"status", to_string(st)}});
      if (r.kind == AnomalyKind::PointAnomaly && (st == AnomalyStatus::Detected || st == AnomalyStatus::Confirmed)) {
        auto& d = pending.effective[r.id];
        d.anomaly_id = r.id;
        d.verdict = Verdict::Confirm;
        pending_ids.push_back(r.id);
      }
    }
    body["anomalies"] = markers;
    if (!pending_ids.empty()) {
      const auto outcome = process_series(y, cfg, pending, true);
      Json ids = Json::array();
      for (const auto& rr : outcome.repairs) {
        if (rr.applied && std::find(pending_ids.begin(), pending_ids.end(), rr.anomaly_id) != pending_ids.end()) {
          ids.push_back(rr.anomaly_id);
        }
      }
      if (!ids.empty()) {
        body["proposed"] = {{"anomaly_ids", ids},
                            {"cumulative", vector_json(outcome.repaired)},
                            {"increments", vector_json(to_increments(outcome.repaired))}};
      }
    }
    send(res, 200, body, art.run_id);
  }

  void decide(const httplib::Request& req, httplib::Response& res) {
    const std::string id = req.matches[1];
    Json body;
    try {
      body = Json::parse(req.body.empty() ? "{}" : req.body);
    } catch (const std::exception&) {
      throw BadRequest("request body is not valid JSON");
    }
    if (!body.is_object()) throw BadRequest("request body must be a JSON object");

    std::lock_guard write_lock(writer);
    const auto log = read_decisions(cfg.decision_log);
    std::shared_lock lock(state_mutex);
    auto it = art.by_id.find(id);
    if (it == art.by_id.end()) {
      send(res, 404, Json{{"error", "unknown anomaly '" + id + "'"}}, art.run_id);
      return;
    }
    const auto& record = art.records[it->second];
    if (current_status(record, log) == AnomalyStatus::Repaired) {
      send(res, 409, Json{{"error", "anomaly already repaired"}}, art.run_id);
      return;
    }
    Json d = body;
    d["anomaly_id"] = id;
    d["decided_at"] = now_timestamp();
    if (!d.contains("actor")) d["actor"] = "review-service";
    if (!d.contains("verdict")) throw BadRequest("verdict is required");
    const auto decision = as_bad_request([&] { return decision_from_json(d); });
    if (decision.period_override && decision.period_override->first <= record.t_index &&
        record.t_index <= decision.period_override->second) {
      throw BadRequest("period_override must exclude the anomalous day");
    }
    append_decision(cfg.decision_log, decision);
    DecisionLog updated = log;
    updated.effective[id] = decision;
    send(res, 200, record_json(record, updated), art.run_id);
  }

  void rerun(httplib::Response& res) {
    bool expected = false;
    if (!busy.compare_exchange_strong(expected, true)) {
      send(res, 409, Json{{"error", "a rerun is already in progress"}}, snapshot_run_id());
      return;
    }
    if (rerun_thread.joinable()) rerun_thread.join();
    {
      std::lock_guard lock(rerun_mutex);
      rerun_state = "running";
      rerun_error.clear();
    }
    rerun_thread = std::thread([this] {
      std::string state = "idle", err;
      try {
        std::ostringstream sink;
        std::lock_guard write_lock(writer);
        run_pipeline(cfg, all_stages(), sink);
        auto fresh = read_artifacts(cfg);
        std::unique_lock lock(state_mutex);
        art = std::move(fresh);
      } catch (const std::exception& e) {
        state = "failed";
        err = e.what();
      }
      {
        std::lock_guard lock(rerun_mutex);
        rerun_state = state;
        rerun_error = err;
        busy = false;
      }
      rerun_done.notify_all();
    });
    send(res, 202, Json{{"state", "running"}, {"progress", "/api/pipeline/status"}}, snapshot_run_id());
  }

  void status(httplib::Response& res) {
    std::string state, err;
    {
      std::lock_guard lock(rerun_mutex);
      state = rerun_state;
      err = rerun_error;
    }
    std::shared_lock lock(state_mutex);
    Json body{{"state", state}, {"last_report", art.report}};
    if (!err.empty()) body["error"] = err;
    send(res, 200, body, art.run_id);
  }
};

ReviewService::ReviewService(PipelineConfig cfg) : impl_(std::make_unique<Impl>(std::move(cfg))) {}

ReviewService::~ReviewService() {
  stop();
}

void ReviewService::load() {
  if (!std::filesystem::exists(run_report_path(impl_->cfg.out_dir))) {
    std::ostringstream sink;
    run_pipeline(impl_->cfg, all_stages(), sink);
  }
  auto fresh = read_artifacts(impl_->cfg);
  std::unique_lock lock(impl_->state_mutex);
  impl_->art = std::move(fresh);
}

std::string ReviewService::run_id() const { return impl_->snapshot_run_id(); }

int ReviewService::bind(const std::string& host, int port) {
  if (port == 0) return impl_->server.bind_to_any_port(host);
  return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool ReviewService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void ReviewService::wait_until_ready() const { impl_->server.wait_until_ready(); }

void ReviewService::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
  wait_for_rerun();
}

void ReviewService::wait_for_rerun() {
  std::unique_lock lock(impl_->rerun_mutex);
  impl_->rerun_done.wait(lock, [this] { return !impl_->busy.load(); });
}

}  // namespace cdq
