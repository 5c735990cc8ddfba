#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "epiglab/error.hpp"
#include "epiglab/loop.hpp"
#include "support/fixtures.hpp"

using namespace epiglab;

namespace {

std::shared_ptr<const DataBundle> synthetic_bundle(int classes, std::size_t per_class, std::uint64_t seed = 1) {
  SyntheticSpec spec;
  spec.classes = classes;
  spec.per_class = per_class;
  auto syn = make_synthetic(spec, seed);
  auto bundle = std::make_shared<DataBundle>();
  bundle->latent = std::make_shared<const EmbeddingTable>(std::move(syn.latent));
  bundle->raw = std::make_shared<const EmbeddingTable>(std::move(syn.raw));
  bundle->oracle = std::move(syn.labels);
  return bundle;
}

LoopConfig quick_config(Method method, std::size_t budget) {
  LoopConfig c;
  c.method = method;
  c.budget = budget;
  c.head.forest.trees = 10;
  c.split = {20, 10, 30};
  c.target_samples = 20;
  c.members = 10;
  c.timing = false;
  return c;
}

std::string csv(const RunRecord& r) {
  std::ostringstream s;
  write_record_csv(s, r);
  return s.str();
}

}  // namespace

TEST_SUITE("loop") {
  TEST_CASE("budget equal to the initial set gives one row and no steps") {
    const auto data = synthetic_bundle(3, 30);
    const auto r = run(quick_config(Method::random, 6), data, 0);
    REQUIRE(r.rows.size() == 1);
    CHECK(r.rows[0].step == 0);
    CHECK(r.rows[0].train_size == 6);
    CHECK(r.rows[0].acquired.empty());
    CHECK_FALSE(std::isnan(r.rows[0].accuracy));
  }

  TEST_CASE("runs are deterministic") {
    const auto data = synthetic_bundle(3, 40);
    for (Method m : {Method::random, Method::epig, Method::bald}) {
      CAPTURE(to_string(m));
      const auto a = run(quick_config(m, 30), data, 1);
      const auto b = run(quick_config(m, 30), data, 1);
      CHECK(csv(a) == csv(b));
      CHECK(record_to_json(a) == record_to_json(b));
    }
  }

  TEST_CASE("budget 300 on three classes takes 294 steps") {
    const auto data = synthetic_bundle(3, 150);
    LoopConfig c = quick_config(Method::random, 300);
    c.head.forest.trees = 2;
    c.eval_every = 50;
    const auto r = run(c, data, 2);
    std::size_t steps = 0;
    for (const auto& row : r.rows) steps += row.step > 0;
    CHECK(steps == 294);
    CHECK(r.rows.back().train_size == 300);
    CHECK_FALSE(std::isnan(r.rows.back().accuracy));
    CHECK(std::isnan(r.rows[1].accuracy));
  }

  TEST_CASE("state invariants hold along a run") {
    const auto data = synthetic_bundle(3, 40);
    for (Method m : {Method::random, Method::bald, Method::epig, Method::max_entropy, Method::kcentre, Method::kmeans,
                     Method::typiclust, Method::probcover}) {
      CAPTURE(to_string(m));
      LoopConfig c = quick_config(m, 16);
      c.batch = 2;
      ActiveLearner learner(c, data, 3);
      learner.initialize_from_oracle();
      const std::size_t total = learner.train_indices().size() + learner.pool_indices().size();
      std::size_t last_train = learner.train_indices().size();
      while (!learner.done()) {
        const auto pending = learner.pending();
        for (auto idx : pending) {
          CHECK(std::find(learner.pool_indices().begin(), learner.pool_indices().end(), idx) !=
                learner.pool_indices().end());
        }
        learner.submit_from_oracle();
        CHECK(learner.train_indices().size() + learner.pool_indices().size() == total);
        CHECK(learner.train_indices().size() == last_train + 2);
        last_train = learner.train_indices().size();
        std::set<std::size_t> train(learner.train_indices().begin(), learner.train_indices().end());
        for (auto p : learner.pool_indices()) CHECK(train.count(p) == 0);
        for (auto idx : pending) CHECK(learner.revealed().known(idx));
      }
      CHECK(learner.train_indices().size() == 16);
      std::size_t prev = 0;
      for (const auto& row : learner.record().rows) {
        CHECK(row.train_size > prev);
        prev = row.train_size;
        CHECK(row.seconds >= 0.0);
      }
    }
  }

  TEST_CASE("unknown oracle label at a selected index is a data error") {
    auto syn = synthetic_bundle(2, 30);
    auto data = std::make_shared<DataBundle>(*syn);
    std::vector<int> e(data->oracle.entries().begin(), data->oracle.entries().end());
    // Hide labels of everything outside a few per class; random acquisition will hit one.
    for (std::size_t i = 8; i < e.size(); ++i) e[i] = LabelVector::kUnknown;
    data->oracle = LabelVector(2, e);
    LoopConfig c = quick_config(Method::random, 20);
    c.split = {0, 0, 0};
    ActiveLearner learner(c, data, 0);
    learner.initialize_from_oracle();
    try {
      while (!learner.done()) learner.submit_from_oracle();
      FAIL("expected a data error");
    } catch (const DataError& err) {
      CHECK(std::string(err.what()).find("step") != std::string::npos);
    }
  }

  TEST_CASE("neural head without validation split is rejected") {
    const auto data = synthetic_bundle(2, 20);
    LoopConfig c = quick_config(Method::random, 10);
    c.head.kind = HeadKind::dropout_mlp;
    c.split.validation = 0;
    CHECK_THROWS_AS(ActiveLearner(c, data, 0), ConfigError);
  }

  TEST_CASE("budget below the initial set is rejected") {
    const auto data = synthetic_bundle(3, 20);
    CHECK_THROWS_AS(ActiveLearner(quick_config(Method::random, 5), data, 0), ConfigError);
  }

  TEST_CASE("grouping task trains on m+1 classes and evaluates on m") {
    const auto data = synthetic_bundle(5, 40);
    LoopConfig c = quick_config(Method::epig, 20);
    c.task.classes_of_interest = {3, 1};
    c.task.group_rest_as_other = true;
    ActiveLearner learner(c, data, 4);
    CHECK(learner.task_oracle().classes() == 3);
    for (auto i : learner.split().test) CHECK(learner.task_oracle()[i] < 2);
    for (auto i : learner.split().target) CHECK(learner.task_oracle()[i] < 2);
    learner.initialize_from_oracle();
    CHECK(learner.train_indices().size() == 6);
    std::map<int, int> init;
    for (auto i : learner.train_indices()) ++init[learner.revealed()[i]];
    CHECK(init[2] == 2);
    while (!learner.done()) learner.submit_from_oracle();
    for (const auto& row : learner.record().rows) CHECK(row.accuracy >= 0.0);
  }

  TEST_CASE("evaluate restricts to the classes of interest") {
    TaskSpec task;
    task.classes_of_interest = {1, 7};
    task.group_rest_as_other = true;
    Matrix m(1, 3);
    m << 0.1, 0.2, 0.7;
    const std::vector<int> y{1};
    const auto r = evaluate_marginal(m, y, task);
    CHECK(r.accuracy == 1.0);
    CHECK(r.nll == doctest::Approx(-std::log(0.2 / 0.3)));
  }

  TEST_CASE("evaluate on perfect and uniform marginals") {
    const TaskSpec task = TaskSpec::all_classes(2);
    Matrix perfect(2, 2);
    perfect << 1, 0, 0, 1;
    const std::vector<int> y{0, 1};
    const auto p = evaluate_marginal(perfect, y, task);
    CHECK(p.accuracy == 1.0);
    CHECK(p.nll == doctest::Approx(0.0).epsilon(1e-9));
    Matrix uniform = Matrix::Constant(2, 2, 0.5);
    CHECK(evaluate_marginal(uniform, y, task).nll == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(evaluate_marginal(Matrix(0, 2), std::vector<int>{}, task), ConfigError);
  }

  TEST_CASE("aggregate mean and standard error") {
    RunRecord a, b;
    a.rows.push_back({0, 6, {}, {}, 0.8, 0.1, 0.0});
    b.rows.push_back({0, 6, {}, {}, 0.9, 0.1, 0.0});
    const auto s = aggregate({a, b});
    REQUIRE(s.size() == 1);
    CHECK(s[0].train_size == 6);
    CHECK(s[0].mean_accuracy == doctest::Approx(0.85));
    CHECK(s[0].stderr_accuracy == doctest::Approx(0.05));
    CHECK(aggregate({a, a})[0].stderr_accuracy == 0.0);
    CHECK_THROWS_AS(aggregate({a}), AggregationError);
    RunRecord c = a;
    c.rows[0].train_size = 7;
    CHECK_THROWS_AS(aggregate({a, c}), AggregationError);
  }

  TEST_CASE("summary length equals the number of evaluation points") {
    const auto data = synthetic_bundle(3, 40);
    LoopConfig c = quick_config(Method::random, 20);
    c.eval_every = 3;
    std::vector<RunRecord> records;
    for (std::uint64_t s = 0; s < 4; ++s) records.push_back(run(c, data, s));
    std::size_t evaluated = 0;
    for (const auto& row : records[0].rows) evaluated += !std::isnan(row.accuracy);
    CHECK(aggregate(records).size() == evaluated);
    CHECK(evaluated == 1 + 14 / 3 + 1);
  }

  TEST_CASE("class histogram") {
    RunRecord r;
    r.rows.push_back({0, 2, {}, {}, 0.5, 0.5, 0});
    r.rows.push_back({1, 3, {4}, {0}, 0.5, 0.5, 0});
    r.rows.push_back({2, 4, {5}, {0}, 0.5, 0.5, 0});
    r.rows.push_back({3, 5, {6}, {1}, 0.5, 0.5, 0});
    const auto h = class_histogram({r}, 2);
    CHECK(h == std::vector<double>{2.0, 1.0});

    const auto data = synthetic_bundle(3, 60);
    std::vector<RunRecord> records;
    for (std::uint64_t s = 0; s < 30; ++s) records.push_back(run(quick_config(Method::random, 26), data, s));
    const auto hist = class_histogram(records, 3);
    double sum = 0;
    for (double v : hist) sum += v;
    CHECK(sum == doctest::Approx(20.0));
    // Per-seed counts are roughly binomial(20, 1/3); the mean over 30 seeds has sd ~0.38.
    for (double v : hist) CHECK(std::abs(v - 20.0 / 3.0) < 3 * 0.38);
  }

  TEST_CASE("step timing") {
    RunRecord r;
    r.rows.push_back({0, 2, {}, {}, 0.5, 0.5, 9.0});
    r.rows.push_back({1, 3, {4}, {0}, 0.5, 0.5, 1.0});
    r.rows.push_back({2, 4, {5}, {0}, 0.5, 0.5, 3.0});
    CHECK(step_timing({r}) == 2.0);
    RunRecord empty;
    empty.rows.push_back({0, 2, {}, {}, 0.5, 0.5, 1.0});
    CHECK_THROWS_AS(step_timing({empty}), TimingError);
  }

  TEST_CASE("timed runs record positive step times") {
    const auto data = synthetic_bundle(3, 30);
    LoopConfig c = quick_config(Method::epig, 10);
    c.timing = true;
    const auto r = run(c, data, 0);
    CHECK(step_timing({r}) > 0.0);
  }

  TEST_CASE("tables are not re-read during a run") {
    fixtures::TempDir dir;
    SyntheticSpec spec;
    spec.classes = 3;
    spec.per_class = 30;
    const auto syn = make_synthetic(spec, 0);
    write_embeddings(dir / "latent.emb", syn.latent);
    write_labels(dir / "labels.lab", syn.labels);
    const auto before = embedding_reads();
    auto data = std::make_shared<const DataBundle>(
        load_bundle((dir / "latent.emb").string(), "", (dir / "labels.lab").string()));
    CHECK(embedding_reads() == before + 1);
    run(quick_config(Method::epig, 20), data, 0);
    CHECK(embedding_reads() == before + 1);
  }

  TEST_CASE("record csv layout") {
    RunRecord r;
    r.seed = 5;
    r.rows.push_back({0, 2, {}, {}, 0.5, 0.25, 0.0});
    r.rows.push_back({1, 4, {7, 9}, {1, 0}, std::nan(""), std::nan(""), 0.125});
    const std::string expected =
        "seed,step,train_size,acquired_index,acquired_class,accuracy,nll,step_seconds\n"
        "5,0,2,,,0.5,0.25,0\n"
        "5,1,4,7;9,1;0,nan,nan,0.125\n";
    CHECK(csv(r) == expected);
    const auto j = nlohmann::json::parse(record_to_json(r));
    CHECK(j["seed"] == 5);
    CHECK(j["rows"][1]["accuracy"].is_null());
    CHECK(j["rows"][1]["acquired_index"] == nlohmann::json::array({7, 9}));
  }

  TEST_CASE("summary and histogram csv") {
    std::ostringstream s;
    write_summary_csv(s, {{6, 0.85, 0.05}});
    CHECK(s.str() == "train_size,mean_accuracy,stderr\n6,0.85,0.05\n");
    std::ostringstream h;
    write_histogram_csv(h, {2.0, 0.5}, {"a", "b"});
    CHECK(h.str() == "class,mean_count\na,2\nb,0.5\n");
  }

  TEST_CASE("config echo carries the settings") {
    LoopConfig c = quick_config(Method::epig, 42);
    const auto j = nlohmann::json::parse(loop_config_to_json(c));
    CHECK(j["method"] == "epig");
    CHECK(j["budget"] == 42);
    CHECK(j["head"]["trees"] == 10);
  }

  TEST_CASE("human initialisation draws uniformly before the first fit") {
    const auto data = synthetic_bundle(3, 30);
    LoopConfig c = quick_config(Method::epig, 10);
    ActiveLearner learner(c, data, 0);
    CHECK(learner.phase() == ActiveLearner::Phase::initial);
    for (std::size_t i = 0; i < learner.init_size(); ++i) {
      CHECK(learner.pending().size() == 1);
      learner.submit_from_oracle();
    }
    CHECK(learner.phase() == ActiveLearner::Phase::active);
    REQUIRE(learner.record().rows.size() == 1);
    CHECK(learner.record().rows[0].train_size == 6);
    const auto pending = learner.pending();
    CHECK_THROWS_AS(learner.submit(std::vector<std::size_t>{pending[0] + 100000}, std::vector<int>{0}), StateError);
    CHECK_THROWS_AS(learner.submit(pending, std::vector<int>{7}), RangeError);
  }
}
