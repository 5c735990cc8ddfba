#include <doctest.h>

#include <atomic>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "epiglab/error.hpp"
#include "epiglab/server.hpp"
#include "support/fixtures.hpp"

// After Eigen: glibc's resolver header, pulled in by httplib, defines `_res`.
#include <httplib.h>

using namespace epiglab;
using nlohmann::json;

namespace {

std::shared_ptr<DataBundle> bundle(std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.classes = 3;
  spec.per_class = 40;
  auto syn = make_synthetic(spec, seed);
  auto b = std::make_shared<DataBundle>();
  b->latent = std::make_shared<const EmbeddingTable>(std::move(syn.latent));
  b->oracle = std::move(syn.labels);
  return b;
}

LoopConfig config(Method method = Method::epig, std::size_t budget = 14) {
  LoopConfig c;
  c.method = method;
  c.budget = budget;
  c.head.forest.trees = 10;
  c.split = {20, 10, 30};
  c.target_samples = 20;
  c.timing = false;
  return c;
}

std::size_t pending_index(const LabelSession& s) { return json::parse(s.state_json())["pending"]["index"]; }

std::string record_csv(const RunRecord& r) {
  std::ostringstream out;
  write_record_csv(out, r);
  return out.str();
}

}  // namespace

TEST_SUITE("server") {
  TEST_CASE("fresh session awaits a label for a pool index") {
    const auto data = bundle();
    LabelSession s(config(), data, 0, true);
    const auto state = json::parse(s.state_json());
    CHECK(state["status"] == "awaiting_label");
    CHECK(state["step"] == 0);
    CHECK(state["budget"] == 14);
    CHECK(state["train_size"] == 6);
    CHECK(state["classes"].size() == 3);
    CHECK(state["pending"]["index"].is_number_integer());
    CHECK(state["pending"]["asset_url"].is_null());
    CHECK(state["pending"]["features"].size() == 8);
    CHECK(state["accuracy_curve"].size() == 1);
  }

  TEST_CASE("wrong index conflicts and bad class is rejected") {
    const auto data = bundle();
    LabelSession s(config(), data, 0, true);
    const std::size_t p = pending_index(s);
    CHECK(s.post_label(p + 1, 0).status == 409);
    CHECK(s.post_label(p, 3).status == 400);
    CHECK(s.post_label(p, -1).status == 400);
    CHECK(s.post_label("{\"index\": 1").status == 400);
    CHECK(s.post_label("{\"index\": 1}").status == 400);
    CHECK(s.post_label("{\"index\": \"a\", \"class\": 0}").status == 400);
    CHECK(s.post_label("[1, 2]").status == 400);
    CHECK(pending_index(s) == p);
  }

  TEST_CASE("valid label advances and the next query comes from the pool") {
    const auto data = bundle();
    LabelSession s(config(), data, 0, true);
    const std::size_t p = pending_index(s);
    const auto reply = s.post_label(p, data->oracle[p]);
    REQUIRE(reply.status == 200);
    const auto state = json::parse(reply.body);
    CHECK(state["train_size"] == 7);
    CHECK(state["step"] == 1);
    const std::size_t next = state["pending"]["index"];
    const auto record = s.record();
    bool in_train = next == p;
    for (const auto& row : record.rows)
      for (auto i : row.acquired) in_train = in_train || i == next;
    CHECK_FALSE(in_train);
  }

  TEST_CASE("reaching the budget finishes the session") {
    const auto data = bundle();
    LabelSession s(config(Method::random, 9), data, 0, true);
    for (int i = 0; i < 3; ++i) {
      const std::size_t p = pending_index(s);
      CHECK(s.post_label(p, data->oracle[p]).status == 200);
    }
    const auto state = json::parse(s.state_json());
    CHECK(state["status"] == "done");
    CHECK(state["pending"].is_null());
    CHECK(s.done());
    CHECK(s.post_label(0, 0).status == 409);
  }

  TEST_CASE("concurrent posts for one pending index: exactly one wins") {
    const auto data = bundle();
    for (int trial = 0; trial < 5; ++trial) {
      LabelSession s(config(), data, static_cast<std::uint64_t>(trial), true);
      const std::size_t p = pending_index(s);
      std::atomic<int> ok{0}, conflict{0};
      std::vector<std::thread> threads;
      for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&] {
          const int status = s.post_label(p, data->oracle[p]).status;
          (status == 200 ? ok : conflict)++;
        });
      }
      for (auto& t : threads) t.join();
      CHECK(ok == 1);
      CHECK(conflict == 3);
    }
  }

  TEST_CASE("scripted oracle posts reproduce the headless run") {
    const auto data = bundle(4);
    for (Method m : {Method::epig, Method::random, Method::kcentre}) {
      CAPTURE(to_string(m));
      LoopConfig c = config(m, 20);
      c.batch = m == Method::kcentre ? 2 : 1;
      const auto headless = run(c, data, 7);
      LabelSession s(c, data, 7, true);
      while (!s.done()) {
        const std::size_t p = pending_index(s);
        REQUIRE(s.post_label(p, data->oracle[p]).status == 200);
      }
      CHECK(record_csv(s.record()) == record_csv(headless));
      CHECK(s.metrics_csv() == record_csv(headless));
      CHECK(record_to_json(s.record()) == record_to_json(headless));
    }
  }

  TEST_CASE("human initialisation labels the first queries") {
    const auto data = bundle();
    LabelSession s(config(Method::epig, 10), data, 0, false);
    auto state = json::parse(s.state_json());
    CHECK(state["train_size"] == 0);
    CHECK(state["accuracy_curve"].empty());
    for (int i = 0; i < 6; ++i) {
      const std::size_t p = pending_index(s);
      REQUIRE(s.post_label(p, data->oracle[p]).status == 200);
    }
    state = json::parse(s.state_json());
    CHECK(state["train_size"] == 6);
    CHECK(state["accuracy_curve"].size() == 1);
    CHECK(state["status"] == "awaiting_label");
  }

  TEST_CASE("assets resolve or carry an explicit null") {
    fixtures::TempDir dir;
    auto data = bundle();
    for (std::size_t i = 0; i < data->oracle.size(); i += 2) fixtures::write_bytes(dir / (std::to_string(i) + ".png"), "img" + std::to_string(i));
    data->assets.emplace(dir.path(), data->oracle.size());
    LabelSession s(config(Method::random, 20), data, 0, true);
    while (!s.done()) {
      const auto state = json::parse(s.state_json());
      const std::size_t p = state["pending"]["index"];
      if (p % 2 == 0) {
        CHECK(state["pending"]["asset_url"] == "/api/asset/" + std::to_string(p));
        const auto a = s.asset(p);
        CHECK(a.status == 200);
        CHECK(a.content_type == "image/png");
        CHECK(a.body == "img" + std::to_string(p));
      } else {
        CHECK(state["pending"]["asset_url"].is_null());
        CHECK(s.asset(p).status == 404);
      }
      s.post_label(p, data->oracle[p]);
    }
  }

  TEST_CASE("http api end to end") {
    const auto data = bundle();
    auto session = std::make_shared<LabelSession>(config(Method::epig, 12), data, 0, true);
    fixtures::TempDir dir;
    ServerOptions opts;
    opts.port = 0;
    opts.metrics_path = dir / "metrics.csv";
    Server server(session, opts);
    server.start();
    REQUIRE(server.port() > 0);
    httplib::Client client("127.0.0.1", server.port());

    auto res = client.Get("/");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body.find("<html") != std::string::npos);

    res = client.Get("/api/state");
    REQUIRE(res);
    CHECK(res->status == 200);
    auto state = json::parse(res->body);
    std::size_t p = state["pending"]["index"];

    res = client.Post("/api/label", json{{"index", p + 1}, {"class", 0}}.dump(), "application/json");
    CHECK(res->status == 409);
    res = client.Post("/api/label", "not json", "application/json");
    CHECK(res->status == 400);
    CHECK(json::parse(res->body).contains("error"));
    res = client.Post("/api/label", json{{"index", p}, {"class", 99}}.dump(), "application/json");
    CHECK(res->status == 400);

    while (state["status"] != "done") {
      p = state["pending"]["index"];
      res = client.Post("/api/label", json{{"index", p}, {"class", data->oracle[p]}}.dump(), "application/json");
      REQUIRE(res->status == 200);
      state = json::parse(res->body);
    }
    res = client.Post("/api/label", json{{"index", 0}, {"class", 0}}.dump(), "application/json");
    CHECK(res->status == 409);

    res = client.Get("/api/metrics.csv");
    REQUIRE(res);
    std::size_t lines = 0;
    for (char ch : res->body) lines += ch == '\n';
    CHECK(lines == 1 + (12 - 6) + 1);  // header, initial row, one per acquisition
    CHECK(client.Get("/api/asset/3")->status == 404);

    server.stop();
    CHECK(fixtures::read_bytes(dir / "metrics.csv") == session->metrics_csv());
  }

  TEST_CASE("busy port is a startup error") {
    const auto data = bundle();
    auto session = std::make_shared<LabelSession>(config(), data, 0, true);
    ServerOptions opts;
    opts.port = 0;
    Server first(session, opts);
    first.start();
    ServerOptions same;
    same.port = first.port();
    Server second(session, same);
    CHECK_THROWS_AS(second.start(), Error);
    first.stop();
  }

  TEST_CASE("ui bundle directory is served at the root") {
    fixtures::TempDir dir;
    fixtures::write_bytes(dir / "index.html", "<html>bundle</html>");
    const auto data = bundle();
    auto session = std::make_shared<LabelSession>(config(), data, 0, true);
    ServerOptions opts;
    opts.port = 0;
    opts.ui_dir = dir.path();
    Server server(session, opts);
    server.start();
    httplib::Client client("127.0.0.1", server.port());
    auto res = client.Get("/");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(res->body == "<html>bundle</html>");
    CHECK(client.Get("/api/state")->status == 200);
    server.stop();
  }
}
