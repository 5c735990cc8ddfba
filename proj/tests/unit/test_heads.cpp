#include <doctest.h>

#include <cmath>

#include "epiglab/error.hpp"
#include "epiglab/heads.hpp"
#include "epiglab/rng.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace epiglab;

namespace {

/// Two Gaussian blobs at +-shift along every axis.
Dataset blobs(std::size_t n, std::size_t d, double shift, std::uint64_t seed, int classes = 2) {
  Rng rng(seed);
  Dataset data{Matrix(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d)), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % static_cast<std::size_t>(classes));
    data.y.push_back(y);
    for (std::size_t f = 0; f < d; ++f) {
      const double centre = (f % static_cast<std::size_t>(classes) == static_cast<std::size_t>(y)) ? shift : -shift;
      data.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(f)) = centre + rng.normal();
    }
  }
  return data;
}

HeadConfig mlp_config(HeadKind kind, std::vector<std::size_t> hidden = {16}) {
  HeadConfig c;
  c.kind = kind;
  c.mlp.hidden_layers = std::move(hidden);
  c.mlp.members = 20;
  c.mlp.ensemble_size = 3;
  c.train.max_steps = 2000;
  c.train.patience_steps = 200;
  return c;
}

double max_abs_diff(const ProbCube& a, const ProbCube& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.values().size(); ++j) m = std::max(m, std::abs(a.values()[j] - b.values()[j]));
  return m;
}

}  // namespace

TEST_SUITE("heads") {
  TEST_CASE("single unbagged tree fits consistent data exactly") {
    const auto data = blobs(60, 4, 0.3, 1, 3);
    HeadConfig c;
    c.forest.trees = 1;
    c.forest.bootstrap = false;
    c.forest.max_features = 4;
    const auto head = fit(c, data, 3, nullptr, 5);
    const auto cube = head.predict_members(data.x, 1, 0);
    const Matrix m = marginal_predictive(cube);
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      Eigen::Index best;
      m.row(i).maxCoeff(&best);
      correct += best == data.y[static_cast<std::size_t>(i)];
    }
    CHECK(correct == data.y.size());
  }

  TEST_CASE("forest members are its trees") {
    const auto data = blobs(40, 3, 1.0, 2);
    HeadConfig c;
    const auto head = fit(c, data, 2, nullptr, 3);
    const auto cube = head.predict_members(data.x, 7, 0);
    CHECK(cube.k() == 100);
    CHECK(head.member_count(7) == 100);
    cube.validate(1e-9);
  }

  TEST_CASE("forest leaves keep zero probability for unseen classes") {
    const auto data = blobs(30, 2, 2.0, 3);
    HeadConfig c;
    c.forest.trees = 10;
    const auto head = fit(c, data, 4, nullptr, 0);
    const auto cube = head.predict_members(data.x, 0, 0);
    for (std::size_t k = 0; k < cube.k(); ++k) {
      for (std::size_t i = 0; i < cube.n(); ++i) {
        CHECK(cube.at(k, i, 2) == 0.0);
        CHECK(cube.at(k, i, 3) == 0.0);
      }
    }
  }

  TEST_CASE("fit and predict are deterministic in the seed") {
    const auto data = blobs(50, 4, 0.8, 4);
    for (HeadKind kind : {HeadKind::forest, HeadKind::dropout_mlp, HeadKind::laplace_mlp, HeadKind::ensemble_mlp}) {
      CAPTURE(to_string(kind));
      HeadConfig c = mlp_config(kind);
      c.kind = kind;
      c.forest.trees = 20;
      c.train.max_steps = 200;
      const auto a = fit(c, data, 2, &data, 11);
      const auto b = fit(c, data, 2, &data, 11);
      CHECK(a.serialize() == b.serialize());
      CHECK(max_abs_diff(a.predict_members(data.x, 8, 3), b.predict_members(data.x, 8, 3)) == 0.0);
    }
  }

  TEST_CASE("dropout head on a separable two-class set beats chance on validation") {
    const auto train = blobs(20, 2, 2.0, 5);
    const auto val = blobs(40, 2, 2.0, 6);
    HeadConfig c = mlp_config(HeadKind::dropout_mlp);
    c.train.max_steps = 5000;
    c.train.patience_steps = 500;
    const auto head = fit(c, train, 2, &val, 1);
    const Matrix m = marginal_predictive(head.predict_members(val.x, 50, 2));
    double nll = 0.0;
    for (Eigen::Index i = 0; i < m.rows(); ++i) nll -= std::log(m(i, val.y[static_cast<std::size_t>(i)]));
    nll /= static_cast<double>(m.rows());
    CHECK(nll < std::log(2.0));
  }

  TEST_CASE("every head emits valid cubes") {
    const auto data = blobs(30, 3, 0.5, 7, 3);
    for (HeadKind kind : {HeadKind::forest, HeadKind::dropout_mlp, HeadKind::laplace_mlp, HeadKind::ensemble_mlp}) {
      CAPTURE(to_string(kind));
      HeadConfig c = mlp_config(kind);
      c.forest.trees = 10;
      c.train.max_steps = 300;
      const auto head = fit(c, data, 3, &data, 2);
      const auto cube = head.predict_members(data.x, 12, 9);
      CHECK_NOTHROW(cube.validate(1e-9));
      if (kind == HeadKind::ensemble_mlp) CHECK(cube.k() == 3);
      if (kind == HeadKind::dropout_mlp || kind == HeadKind::laplace_mlp) CHECK(cube.k() == 12);
    }
  }

  TEST_CASE("dropout rate zero makes all members identical") {
    const auto data = blobs(20, 3, 1.0, 8);
    HeadConfig c = mlp_config(HeadKind::dropout_mlp);
    c.mlp.dropout_rate = 0.0;
    c.train.max_steps = 100;
    const auto cube = fit(c, data, 2, &data, 1).predict_members(data.x, 10, 4);
    double m = 0.0;
    for (std::size_t k = 1; k < cube.k(); ++k) {
      for (std::size_t i = 0; i < cube.n(); ++i) {
        for (std::size_t y = 0; y < cube.c(); ++y) m = std::max(m, std::abs(cube.at(k, i, y) - cube.at(0, i, y)));
      }
    }
    CHECK(m < 1e-12);
  }

  TEST_CASE("zero-dropout head equals a one-network ensemble") {
    const auto data = blobs(20, 3, 1.0, 9);
    HeadConfig drop = mlp_config(HeadKind::dropout_mlp);
    drop.mlp.dropout_rate = 0.0;
    drop.train.max_steps = 300;
    HeadConfig ens = drop;
    ens.kind = HeadKind::ensemble_mlp;
    ens.mlp.ensemble_size = 1;
    const auto a = fit(drop, data, 2, &data, 17).predict_members(data.x, 1, 0);
    const auto b = fit(ens, data, 2, &data, 17).predict_members(data.x, 1, 0);
    REQUIRE(a.k() == b.k());
    CHECK(max_abs_diff(a, b) < 1e-12);
  }

  TEST_CASE("laplace variances are positive and equal the prior without curvature") {
    Dataset data = blobs(10, 2, 1.0, 10);
    data.x.col(1).setZero();  // weights on this input never receive gradient
    HeadConfig c = mlp_config(HeadKind::laplace_mlp, {4});
    c.train.max_steps = 50;
    const auto head = fit(c, data, 2, &data, 3);
    const auto& post = std::get<LaplacePosterior>(head.state());
    REQUIRE(post.variance.size() == post.net.parameter_count());
    for (double v : post.variance) CHECK(v > 0.0);
    // First-layer weights are stored out x in; column 1 is every second entry.
    for (std::size_t o = 0; o < 4; ++o) CHECK(post.variance[o * 2 + 1] == 1.0);
  }

  TEST_CASE("empty training set is a state error") {
    HeadConfig c;
    Dataset empty{Matrix(0, 3), {}};
    CHECK_THROWS_AS(fit(c, empty, 2, nullptr, 0), StateError);
  }

  TEST_CASE("dimension mismatch is a shape error") {
    const auto data = blobs(20, 3, 1.0, 11);
    HeadConfig c;
    c.forest.trees = 3;
    const auto head = fit(c, data, 2, nullptr, 0);
    CHECK_THROWS_AS(head.predict_members(Matrix::Zero(2, 4), 1, 0), ShapeError);
    HeadConfig m = mlp_config(HeadKind::dropout_mlp);
    m.train.max_steps = 10;
    const auto net = fit(m, data, 2, &data, 0);
    CHECK_THROWS_AS(net.predict_members(Matrix::Zero(2, 4), 2, 0), ShapeError);
  }

  TEST_CASE("non-finite loss is a training error reporting the step") {
    const auto data = blobs(20, 2, 1.0, 12);
    HeadConfig c = mlp_config(HeadKind::dropout_mlp);
    c.train.learning_rate = 1e300;
    try {
      fit(c, data, 2, &data, 0);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
  }

  TEST_CASE("gradient check on small heads") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto data = blobs(12, 3, 0.5, seed, 3);
      HeadConfig c = mlp_config(HeadKind::dropout_mlp, {6});
      CHECK(gradient_check(c, data, 3, seed) <= 1e-4);
    }
  }

  TEST_CASE("gradient check with constant features") {
    Dataset data = blobs(10, 3, 0.5, 1);
    data.x.col(0).setConstant(2.5);
    data.x.col(2).setConstant(-1.0);
    HeadConfig c = mlp_config(HeadKind::laplace_mlp, {5});
    CHECK(gradient_check(c, data, 2, 4) <= 1e-4);
  }

  TEST_CASE("gradient check on a zero network with symmetric data completes") {
    Mlp net(2, {3}, 2);
    Matrix x(4, 2);
    x << 1, 0, -1, 0, 0, 1, 0, -1;
    std::vector<int> y{0, 1, 0, 1};
    const double dev = gradient_deviation(net, x, y, 1e-4);
    CHECK(std::isfinite(dev));
  }

  TEST_CASE("gradient check rejects large heads") {
    const auto data = blobs(10, 20, 0.5, 1);
    HeadConfig c = mlp_config(HeadKind::dropout_mlp, {32});
    CHECK_THROWS_AS(gradient_check(c, data, 2, 0), ConfigError);
  }

  TEST_CASE("marginal predictive") {
    ProbCube two(2, 1, 2, {1.0, 0.0, 0.0, 1.0});
    const Matrix m = marginal_predictive(two);
    CHECK(m(0, 0) == doctest::Approx(0.5));
    CHECK(m(0, 1) == doctest::Approx(0.5));

    ProbCube one(1, 2, 3, {0.2, 0.3, 0.5, 0.6, 0.4, 0.0});
    const Matrix m1 = marginal_predictive(one);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t y = 0; y < 3; ++y) CHECK(m1(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y)) == one.at(0, i, y));
    }

    Rng rng(3);
    const auto cube = fixtures::random_cube(9, 13, 5, rng);
    const auto ref = oracle::marginal(cube);
    const Matrix mr = marginal_predictive(cube);
    double worst = 0.0;
    for (std::size_t i = 0; i < 13; ++i) {
      for (std::size_t y = 0; y < 5; ++y) {
        worst = std::max(worst, std::abs(mr(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(y)) -
                                         static_cast<double>(ref[i][y])));
      }
      CHECK(mr.row(static_cast<Eigen::Index>(i)).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK(worst <= 1e-12);
  }

  TEST_CASE("serialization round trip") {
    const auto data = blobs(30, 3, 1.0, 13);
    for (HeadKind kind : {HeadKind::forest, HeadKind::dropout_mlp, HeadKind::laplace_mlp, HeadKind::ensemble_mlp}) {
      CAPTURE(to_string(kind));
      HeadConfig c = mlp_config(kind);
      c.forest.trees = 5;
      c.train.max_steps = 50;
      const auto head = fit(c, data, 2, &data, 6);
      const auto bytes = head.serialize();
      CHECK(bytes.substr(0, 4) == "HEAD");
      const auto back = FittedHead::deserialize(bytes);
      CHECK(back.serialize() == bytes);
      CHECK(max_abs_diff(back.predict_members(data.x, 4, 1), head.predict_members(data.x, 4, 1)) == 0.0);
    }
    CHECK_THROWS_AS(FittedHead::deserialize("HEAX"), FormatError);
  }

  TEST_CASE("config validation") {
    HeadConfig c;
    c.forest.trees = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    HeadConfig d = mlp_config(HeadKind::dropout_mlp);
    d.mlp.dropout_rate = 1.0;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    CHECK(head_kind_from_string("dropout") == HeadKind::dropout_mlp);
    CHECK_THROWS_AS(head_kind_from_string("svm"), ConfigError);
  }
}
