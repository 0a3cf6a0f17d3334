#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <thread>

#include "seqcf/cli.hpp"
#include "seqcf/service.hpp"
#include "support.hpp"

using namespace seqcf;
using namespace seqcf::test;
using nlohmann::json;

namespace {

int build_into(const std::string& dir, const std::string& seed = "42") {
  std::vector<std::string> args = {"seqcf", "build", "--seed", seed, "--out", dir};
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
}

const TempDir& artifacts() {
  static const TempDir dir;
  static const int code = build_into(dir.path().string());
  EXPECT_EQ(code, 0);
  return dir;
}

// A service on an ephemeral port, listening on its own thread.
class Running {
 public:
  explicit Running(ServiceOptions o = {}) : svc_(std::move(o)) {
    port_ = svc_.bind("127.0.0.1", 0);
    thread_ = std::thread([this] { svc_.listen(); });
    svc_.wait_until_ready();
  }
  ~Running() {
    svc_.stop();
    thread_.join();
  }
  Service& service() { return svc_; }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port_);
    c.set_read_timeout(60, 0);
    return c;
  }
  int port() const { return port_; }

 private:
  Service svc_;
  int port_ = -1;
  std::thread thread_;
};

// Shared loaded service for read-only tests.
Running& loaded() {
  static Running r({"http://localhost:5173", ""});
  static const bool ready = [] {
    r.service().set_snapshot(std::make_shared<const Snapshot>(load_snapshot(artifacts().path())));
    return true;
  }();
  (void)ready;
  return r;
}

json post_cf(const json& body, int* status = nullptr) {
  auto res = loaded().client().Post("/counterfactual", body.dump(), "application/json");
  EXPECT_TRUE(res);
  if (status) *status = res->status;
  return json::parse(res->body);
}

std::string cli_out(std::vector<std::string> args) {
  args.insert(args.begin(), "seqcf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  EXPECT_EQ(cli::run(static_cast<int>(argv.size()), argv.data(), out, err), 0) << err.str();
  return out.str();
}

}  // namespace

TEST(Service, UnavailableUntilLoaded) {
  Running r;
  auto c = r.client();
  auto h = c.Get("/health");
  ASSERT_TRUE(h);
  EXPECT_EQ(h->status, 503);
  EXPECT_EQ(json::parse(h->body)["status"], "loading");
  EXPECT_EQ(c.Get("/patients")->status, 503);

  r.service().load_async(artifacts().path());
  for (int k = 0; k < 600 && c.Get("/health")->status != 200; ++k) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  auto ok = c.Get("/health");
  ASSERT_EQ(ok->status, 200);
  EXPECT_EQ(json::parse(ok->body)["status"], "ok");
}

TEST(Service, SnapshotIdFollowsArtifactBytes) {
  TempDir a, b, c;
  ASSERT_EQ(build_into(a.path().string()), 0);
  ASSERT_EQ(build_into(b.path().string()), 0);
  ASSERT_EQ(build_into(c.path().string(), "43"), 0);
  EXPECT_EQ(load_snapshot(a.path()).id, load_snapshot(b.path()).id);
  EXPECT_NE(load_snapshot(a.path()).id, load_snapshot(c.path()).id);
  auto h = json::parse(loaded().client().Get("/health")->body);
  EXPECT_EQ(h["snapshot_id"], load_snapshot(a.path()).id);
}

TEST(Service, PatientsPaging) {
  auto c = loaded().client();
  auto all = json::parse(c.Get("/patients?limit=5&offset=2")->body);
  EXPECT_EQ(all["total"], 2723);
  EXPECT_EQ(all["matched"], 2723);
  ASSERT_EQ(all["patients"].size(), 5u);
  EXPECT_EQ(all["patients"][0]["patient_id"], "P00003");

  auto high = json::parse(c.Get("/patients?min_risk=0.5&limit=10000")->body);
  const auto& cal = calibrated();
  std::size_t want = 0;
  for (const auto& p : cal.cohort.patients()) want += cal.model.score(p.features) >= 0.5;
  EXPECT_EQ(high["matched"], want);
  EXPECT_EQ(high["patients"].size(), want);
  for (const auto& p : high["patients"]) EXPECT_GE(p["y_hat"].get<double>(), 0.5);

  EXPECT_EQ(c.Get("/patients?limit=abc")->status, 400);
  EXPECT_EQ(c.Get("/patients?min_risk=0.5x")->status, 400);
}

TEST(Service, PatientDetailRoundTripsBits) {
  auto c = loaded().client();
  const auto& cal = calibrated();
  const auto& cat = cal.cohort.catalog();
  const auto& p = cal.cohort.find("P00042");
  auto res = c.Get("/patients/P00042");
  ASSERT_EQ(res->status, 200);
  auto j = json::parse(res->body);
  ASSERT_EQ(j["periods"].size(), 3u);
  TemporalFeatureVector back(cat.size());
  for (auto t : kPeriods) {
    const auto& feats = j["periods"][std::string(to_string(t))];
    ASSERT_EQ(feats.size(), cat.size());
    for (const auto& f : feats) {
      auto i = cat.index_of(f["code"].get<std::string>());
      EXPECT_EQ(f["class"], to_string(cat.cls(i)));
      back.set(i, t, f["present"].get<bool>());
    }
  }
  EXPECT_EQ(back, p.features);
  EXPECT_DOUBLE_EQ(j["y_hat"].get<double>(), cal.model.score(p.features));

  auto missing = c.Get("/patients/nobody");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body)["error"]["code"], "not_found");
}

TEST(Service, CounterfactualErrors) {
  int status = 0;
  auto e = post_cf({{"patient_id", "P00001"},
                    {"interventions", {{{"code", "Glucose_H"}, {"period", "history"}}}}},
                   &status);
  EXPECT_EQ(status, 400);
  EXPECT_EQ(e["error"]["field"], "Glucose_H");

  post_cf({{"patient_id", "nobody"}}, &status);
  EXPECT_EQ(status, 404);

  auto none = post_cf({{"patient_id", "P00001"}, {"mode", "naive"}, {"theta", 0.0001}, {"max_changes", 1}}, &status);
  EXPECT_EQ(status, 422);
  EXPECT_EQ(none["error"]["code"], "no_counterfactual");

  auto res = loaded().client().Post("/counterfactual", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);
  post_cf(json::array(), &status);
  EXPECT_EQ(status, 400);
  post_cf({{"mode", "naive"}}, &status);
  EXPECT_EQ(status, 400);
}

TEST(Service, RepeatedAndConcurrentRequestsAgree) {
  json body = {{"patient_id", "P00007"},
               {"interventions", {{{"code", "Insulin"}, {"period", "history"}}}},
               {"propagation", "stochastic"},
               {"samples", 100},
               {"seed", 3}};
  auto c = loaded().client();
  auto first = c.Post("/counterfactual", body.dump(), "application/json");
  ASSERT_EQ(first->status, 200);
  EXPECT_EQ(c.Post("/counterfactual", body.dump(), "application/json")->body, first->body);

  std::vector<std::future<std::string>> fs;
  for (int k = 0; k < 8; ++k) {
    fs.push_back(std::async(std::launch::async, [&] {
      return loaded().client().Post("/counterfactual", body.dump(), "application/json")->body;
    }));
  }
  for (auto& f : fs) EXPECT_EQ(f.get(), first->body);
}

TEST(Service, MatchesCliOutput) {
  const auto dir = artifacts().path().string();
  std::vector<std::string> flags = {"--cohort", dir + "/cohort.csv", "--graph", dir + "/graph.json",
                                    "--model", dir + "/model.json"};
  std::vector<std::string> cf_args = {"cf", "--patient", "P00011", "--intervention", "Lisinopril@past",
                                      "--propagation", "stochastic", "--samples", "64", "--seed", "9"};
  cf_args.insert(cf_args.end(), flags.begin(), flags.end());
  auto cli_cf = json::parse(cli_out(cf_args));
  auto svc_cf = post_cf({{"patient_id", "P00011"},
                         {"interventions", {{{"code", "Lisinopril"}, {"period", "past"}}}},
                         {"propagation", "stochastic"},
                         {"samples", 64},
                         {"seed", 9}});
  EXPECT_EQ(cli_cf, svc_cf);

  auto c = loaded().client();
  EXPECT_EQ(json::parse(cli_out({"audit", "--cohort", dir + "/cohort.csv", "--json"})),
            json::parse(c.Get("/audit")->body));
  EXPECT_EQ(json::parse(cli_out({"cascade", "--cohort", dir + "/cohort.csv", "--json"})),
            json::parse(c.Get("/cascade")->body));
}

TEST(Service, CatalogExposesClasses) {
  auto res = loaded().client().Get("/catalog");
  ASSERT_EQ(res->status, 200);
  auto j = json::parse(res->body);
  auto cat = catalog_from_json(j);
  EXPECT_EQ(cat.to_json(), default_cat()->to_json());
  std::size_t immutable = 0;
  for (const auto& f : j["features"]) immutable += f["class"] == "immutable";
  EXPECT_EQ(immutable, 5u);
}

TEST(Service, CorsHeaders) {
  auto c = loaded().client();
  auto res = c.Get("/health");
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "http://localhost:5173");
  auto pre = c.Options("/counterfactual");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
  EXPECT_NE(pre->get_header_value("Access-Control-Allow-Methods").find("POST"), std::string::npos);

  Running plain;
  plain.service().set_snapshot(loaded().service().snapshot());
  EXPECT_FALSE(plain.client().Get("/health")->has_header("Access-Control-Allow-Origin"));
}
