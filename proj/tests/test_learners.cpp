#include <doctest.h>

#include <random>

#include "blipmsm/learners.hpp"
#include "blipmsm/stats.hpp"
#include "blipmsm/trial_data.hpp"

using namespace blipmsm;

namespace {

// (A, L1, L2) with a logistic outcome including an A:L1 interaction.
learner_task make_task(int n, std::uint64_t seed, Eigen::VectorXd* y_out,
                       bool logistic_truth = true) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  learner_task task;
  task.features.resize(n, 3);
  task.names = {"a", "l1", "l2"};
  task.treatment_col = 0;
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    const double a = u(rng) < 0.5 ? 1.0 : 0.0;
    const double l1 = z(rng);
    const double l2 = u(rng) < 0.5 ? 1.0 : 0.0;
    task.features(i, 0) = a;
    task.features(i, 1) = l1;
    task.features(i, 2) = l2;
    const double p = logistic_truth ? stats::expit(-0.3 + 0.9 * a + 0.7 * l1 - 1.2 * a * l1)
                                    : 0.5;
    y[i] = u(rng) < p ? 1.0 : 0.0;
  }
  *y_out = y;
  return task;
}

}  // namespace

TEST_CASE("mean learner predicts the weighted mean everywhere") {
  Eigen::VectorXd y;
  learner_task task = make_task(40, 3, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(40);
  auto cand = fit_candidate({.kind = learner_kind::mean}, task, y, w, 1e-4, 1);
  Eigen::VectorXd p = cand->predict(task.features);
  const double m = y.mean();
  for (int i = 0; i < 40; ++i) CHECK(p[i] == doctest::Approx(m));
}

TEST_CASE("library fit trains every candidate and flags nonconvergence") {
  Eigen::VectorXd y;
  learner_task task = make_task(300, 11, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(300);
  std::vector<learner_spec> specs = {
      {.kind = learner_kind::mean},
      {.kind = learner_kind::logistic_interact, .covariate = 0},
      {.kind = learner_kind::logistic_interact_all},
      {.kind = learner_kind::ridge_logistic},
      {.kind = learner_kind::hinge_spline},
      {.kind = learner_kind::bagged_trees, .n_trees = 25},
  };
  auto fits = fit_learner_library(task, y, w, specs, 1e-4, 5);
  REQUIRE(fits.size() == specs.size());
  for (const auto& f : fits) {
    Eigen::VectorXd p = f->predict(task.features);
    CHECK(p.minCoeff() > 0.0);
    CHECK(p.maxCoeff() < 1.0);
  }
}

TEST_CASE("duplicate learner names are rejected") {
  Eigen::VectorXd y;
  learner_task task = make_task(30, 1, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(30);
  std::vector<learner_spec> specs = {{.kind = learner_kind::mean}, {.kind = learner_kind::mean}};
  try {
    fit_learner_library(task, y, w, specs, 1e-4, 1);
    FAIL("expected DuplicateLearner");
  } catch (const error& e) {
    CHECK(e.code() == errc::duplicate_learner);
  }
  CHECK_THROWS_AS(fit_learner_library(task, y, w, {}, 1e-4, 1), error);
}

TEST_CASE("single-candidate ensemble carries weight one") {
  Eigen::VectorXd y;
  learner_task task = make_task(60, 2, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(60);
  auto folds = make_folds(60, 5, 1);
  auto ens = fit_super_learner(task, y, w, {{.kind = learner_kind::mean}}, folds, 1e-4, 1);
  CHECK(ens.weights.size() == 1);
  CHECK(ens.weights[0] == 1.0);
}

TEST_CASE("super learner puts most weight on the correctly specified candidate") {
  Eigen::VectorXd y;
  learner_task task = make_task(5000, 17, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(5000);
  auto folds = make_folds(5000, 10, 3);
  std::vector<learner_spec> specs = {{.kind = learner_kind::mean},
                                     {.kind = learner_kind::logistic_interact_all}};
  auto ens = fit_super_learner(task, y, w, specs, folds, 1e-4, 3);
  CHECK(ens.weights[1] >= 0.9);
  CHECK(ens.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ensemble CV risk does not exceed the best candidate risk") {
  Eigen::VectorXd y;
  learner_task task = make_task(400, 23, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(400);
  auto folds = make_folds(400, 10, 5);
  std::vector<learner_spec> specs = {
      {.kind = learner_kind::mean},
      {.kind = learner_kind::logistic_interact_all},
      {.kind = learner_kind::bagged_trees, .n_trees = 30},
  };
  auto ens = fit_super_learner(task, y, w, specs, folds, 1e-4, 7);
  CHECK(ens.ensemble_cv_risk <= ens.cv_risks.minCoeff() + 1e-8);
  CHECK(ens.weights.minCoeff() >= 0.0);
  CHECK(ens.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ensemble predictions stay between the candidate extremes") {
  Eigen::VectorXd y;
  learner_task task = make_task(250, 31, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(250);
  auto folds = make_folds(250, 5, 9);
  std::vector<learner_spec> specs = {
      {.kind = learner_kind::mean},
      {.kind = learner_kind::logistic_main},
      {.kind = learner_kind::bagged_trees, .n_trees = 20},
  };
  auto ens = fit_super_learner(task, y, w, specs, folds, 1e-4, 9);
  Eigen::VectorXd pe = ens.predict(task.features);
  std::vector<Eigen::VectorXd> pc;
  for (const auto& c : ens.candidates) pc.push_back(c->predict(task.features));
  for (int i = 0; i < 250; ++i) {
    double lo = 1.0, hi = 0.0;
    for (const auto& p : pc) {
      lo = std::min(lo, p[i]);
      hi = std::max(hi, p[i]);
    }
    CHECK(pe[i] >= lo - 1e-12);
    CHECK(pe[i] <= hi + 1e-12);
  }
}

TEST_CASE("super learner output is deterministic in the seed") {
  Eigen::VectorXd y;
  learner_task task = make_task(300, 41, &y);
  Eigen::VectorXd w = Eigen::VectorXd::Ones(300);
  auto folds = make_folds(300, 5, 2);
  std::vector<learner_spec> specs = {
      {.kind = learner_kind::mean},
      {.kind = learner_kind::hinge_spline},
      {.kind = learner_kind::bagged_trees, .n_trees = 15},
  };
  auto a = fit_super_learner(task, y, w, specs, folds, 1e-4, 13);
  auto b = fit_super_learner(task, y, w, specs, folds, 1e-4, 13);
  CHECK((a.weights - b.weights).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.predict(task.features) - b.predict(task.features)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("a lone positive case degenerates every fold assignment") {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(8);
  y[3] = 1.0;
  learner_task task;
  task.features.resize(8, 2);
  task.names = {"a", "l1"};
  task.treatment_col = 0;
  std::mt19937_64 rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  for (int i = 0; i < 8; ++i) {
    task.features(i, 0) = i % 2;
    task.features(i, 1) = z(rng);
  }
  Eigen::VectorXd w = Eigen::VectorXd::Ones(8);
  auto folds = make_folds(8, 2, 1);
  std::vector<learner_spec> specs = {{.kind = learner_kind::mean},
                                     {.kind = learner_kind::logistic_main}};
  try {
    fit_super_learner(task, y, w, specs, folds, 1e-4, 1);
    FAIL("expected DegenerateFolds");
  } catch (const error& e) {
    CHECK(e.code() == errc::degenerate_folds);
  }
}
