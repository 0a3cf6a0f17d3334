#pragma once

// Read-only HTTP/JSON API over one immutable artifact snapshot.

#include <charconv>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include "httplib.h"
#include "json.hpp"
#include "seqcf/engine.hpp"

namespace seqcf {

struct ServiceOptions {
  std::string allow_origin;  // empty disables CORS headers
  std::string static_dir;    // served under / when set
  std::size_t default_limit = 50;
};

class Service {
 public:
  explicit Service(ServiceOptions options = {}) : options_(std::move(options)) { routes(); }

  ~Service() {
    stop();
    if (loader_.joinable()) loader_.join();
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  void set_snapshot(std::shared_ptr<const Snapshot> s) {
    std::lock_guard lock(mu_);
    snapshot_ = std::move(s);
  }

  std::shared_ptr<const Snapshot> snapshot() const {
    std::lock_guard lock(mu_);
    return snapshot_;
  }

  // Loads in the background; /health answers 503 until it finishes.
  void load_async(std::filesystem::path dir, double epsilon = kDefaultEpsilon,
                  std::function<void(const std::string&)> on_error = {}) {
    loader_ = std::thread([this, dir = std::move(dir), epsilon, on_error = std::move(on_error)] {
      try {
        set_snapshot(std::make_shared<const Snapshot>(load_snapshot(dir, epsilon)));
      } catch (const std::exception& e) {
        if (on_error) on_error(e.what());
      }
    });
  }

  // Returns the bound port (useful with port 0), or -1.
  int bind(const std::string& host, int port) {
    if (port == 0) return server_.bind_to_any_port(host);
    return server_.bind_to_port(host, port) ? port : -1;
  }
  bool listen() { return server_.listen_after_bind(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  void stop() {
    if (server_.is_running()) server_.stop();
  }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(2), "application/json");
  }

  static void send_error(httplib::Response& res, int status, const std::string& code,
                         const std::string& message, const std::string& field = {}) {
    nlohmann::json e = {{"code", code}, {"message", message}};
    if (!field.empty()) e["field"] = field;
    send_json(res, status, {{"error", e}});
  }

  // Runs `body` against the current snapshot and maps engine exceptions onto
  // status codes.
  template <class F>
  void guarded(httplib::Response& res, F&& body) const {
    auto snap = snapshot();
    if (!snap) {
      send_error(res, 503, "loading", "snapshot not loaded yet");
      return;
    }
    try {
      body(*snap);
    } catch (const NotFoundError& e) {
      send_error(res, 404, "not_found", e.what(), e.field());
    } catch (const ValidationError& e) {
      send_error(res, 400, "invalid_request", e.what(), e.field());
    } catch (const NoCounterfactualError& e) {
      send_error(res, 422, "no_counterfactual", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  }

  template <class T>
  static T query_number(const httplib::Request& req, const char* name, T fallback) {
    if (!req.has_param(name)) return fallback;
    auto s = req.get_param_value(name);
    T v{};
    if constexpr (std::is_floating_point_v<T>) {
      try {
        std::size_t used = 0;
        v = static_cast<T>(std::stod(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw ValidationError(std::string("invalid number for ") + name, name);
      }
    } else {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size()) {
        throw ValidationError(std::string("invalid integer for ") + name, name);
      }
    }
    return v;
  }

  void routes() {
    if (!options_.allow_origin.empty()) {
      server_.set_default_headers({{"Access-Control-Allow-Origin", options_.allow_origin},
                                   {"Access-Control-Allow-Headers", "Content-Type"},
                                   {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
      server_.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    }
    if (!options_.static_dir.empty()) server_.set_mount_point("/", options_.static_dir);

    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      auto snap = snapshot();
      if (!snap) {
        send_json(res, 503, {{"status", "loading"}, {"snapshot_id", nullptr}});
        return;
      }
      send_json(res, 200, {{"status", "ok"}, {"snapshot_id", snap->id}});
    });

    server_.Get("/catalog", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&](const Snapshot& s) { send_json(res, 200, s.catalog->to_json()); });
    });

    server_.Get("/patients", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&](const Snapshot& s) {
        auto limit = query_number<std::size_t>(req, "limit", options_.default_limit);
        auto offset = query_number<std::size_t>(req, "offset", 0);
        auto min_risk = query_number<double>(req, "min_risk", 0.0);
        send_json(res, 200, patients_page(s, limit, offset, min_risk));
      });
    });

    server_.Get(R"(/patients/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&](const Snapshot& s) { send_json(res, 200, patient_detail(s, req.matches[1].str())); });
    });

    server_.Get("/audit", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&](const Snapshot& s) { send_json(res, 200, audit_json(s.cohort)); });
    });

    server_.Get("/cascade", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&](const Snapshot& s) { send_json(res, 200, cascade_report_json(s.cohort)); });
    });

    server_.Post("/counterfactual", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&](const Snapshot& s) {
        auto body = parse_json(req.body, "request body");
        send_json(res, 200, run_counterfactual(s, cf_request_from_json(body)));
      });
    });
  }

  ServiceOptions options_;
  httplib::Server server_;
  mutable std::mutex mu_;
  std::shared_ptr<const Snapshot> snapshot_;
  std::thread loader_;
};

}  // namespace seqcf
