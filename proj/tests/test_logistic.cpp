#include <doctest.h>

#include <numeric>
#include <random>

#include "blipmsm/logistic.hpp"
#include "blipmsm/stats.hpp"
#include "newton_oracle.hpp"

using namespace blipmsm;

namespace {

design_matrix dm(const Eigen::MatrixXd& x, std::vector<std::string> labels) {
  return design_matrix{x, std::move(labels)};
}

// Fixed 2-covariate weighted problem with offset, n = 50.
oracle::problem fixed_problem() {
  std::mt19937_64 rng(20240517);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  const int n = 50;
  oracle::problem pr;
  pr.X.resize(n, 3);
  pr.y.resize(n);
  pr.w.resize(n);
  pr.offset.resize(n);
  for (int i = 0; i < n; ++i) {
    const double x1 = z(rng), x2 = u(rng) < 0.4 ? 1.0 : 0.0;
    pr.X(i, 0) = 1.0;
    pr.X(i, 1) = x1;
    pr.X(i, 2) = x2;
    pr.offset[i] = 0.3 * z(rng);
    pr.w[i] = 0.25 + 1.5 * u(rng);
    const double p = stats::expit(-0.4 + 0.8 * x1 - 1.1 * x2 + pr.offset[i]);
    pr.y[i] = u(rng) < p ? 1.0 : 0.0;
  }
  return pr;
}

}  // namespace

TEST_CASE("intercept-only fit at mean one half is exactly zero") {
  Eigen::VectorXd y(4);
  y << 0, 1, 0, 1;
  auto fit = fit_logistic(design_matrix::intercept_only(4), y);
  CHECK(fit.converged);
  CHECK(fit.coef[0] == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("correct offset leaves nothing to fit") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 20000;
  Eigen::VectorXd y(n), offset(n);
  for (int i = 0; i < n; ++i) {
    const double p = 0.2 + 0.6 * u(rng);
    offset[i] = stats::logit(p);
    y[i] = u(rng) < p ? 1.0 : 0.0;
  }
  auto fit = fit_logistic(design_matrix::intercept_only(n), y, Eigen::VectorXd::Ones(n), offset);
  CHECK(fit.converged);
  CHECK(std::fabs(fit.coef[0]) < 0.05);
}

TEST_CASE("matches the Newton grid-restart oracle on a fixed weighted problem") {
  oracle::problem pr = fixed_problem();
  Eigen::VectorXd truth = oracle::maximize(pr);

  auto fit = fit_logistic(dm(pr.X, {"(intercept)", "x1", "x2"}), pr.y, pr.w, pr.offset);
  REQUIRE(fit.converged);
  for (int j = 0; j < 3; ++j) {
    CHECK(fit.coef[j] == doctest::Approx(truth[j]).epsilon(1e-6));
  }

  SUBCASE("in-sample predictions match the oracle fit") {
    auto d = dm(pr.X, {"(intercept)", "x1", "x2"});
    Eigen::VectorXd p = predict_proba(fit, d, pr.offset);
    for (int i = 0; i < pr.X.rows(); ++i) {
      double eta = pr.offset[i];
      for (int j = 0; j < 3; ++j) eta += pr.X(i, j) * truth[j];
      CHECK(p[i] == doctest::Approx(stats::expit(eta)).epsilon(1e-6));
    }
  }
}

TEST_CASE("constant weights reproduce the unweighted MLE") {
  oracle::problem pr = fixed_problem();
  auto d = dm(pr.X, {"(intercept)", "x1", "x2"});
  auto a = fit_logistic(d, pr.y, Eigen::VectorXd::Ones(pr.y.size()),
                        Eigen::VectorXd::Zero(pr.y.size()));
  auto b = fit_logistic(d, pr.y, Eigen::VectorXd::Constant(pr.y.size(), 3.5),
                        Eigen::VectorXd::Zero(pr.y.size()));
  for (int j = 0; j < 3; ++j) CHECK(a.coef[j] == doctest::Approx(b.coef[j]).epsilon(1e-7));

  oracle::problem un = pr;
  un.w.setOnes();
  un.offset.setZero();
  Eigen::VectorXd truth = oracle::maximize(un);
  for (int j = 0; j < 3; ++j) CHECK(a.coef[j] == doctest::Approx(truth[j]).epsilon(1e-6));
}

TEST_CASE("score equation holds at convergence") {
  oracle::problem pr = fixed_problem();
  auto d = dm(pr.X, {"(intercept)", "x1", "x2"});
  auto fit = fit_logistic(d, pr.y, pr.w, pr.offset);
  REQUIRE(fit.converged);
  Eigen::VectorXd p = predict_proba(fit, d, pr.offset);
  Eigen::VectorXd score = pr.X.transpose() * (pr.w.array() * (pr.y - p).array()).matrix();
  CHECK(score.cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("row order does not change the fit") {
  oracle::problem pr = fixed_problem();
  auto base = fit_logistic(dm(pr.X, {"(intercept)", "x1", "x2"}), pr.y, pr.w, pr.offset);

  std::vector<int> perm(static_cast<std::size_t>(pr.y.size()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(99);
  std::shuffle(perm.begin(), perm.end(), rng);
  oracle::problem sh = pr;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    sh.X.row(static_cast<Eigen::Index>(i)) = pr.X.row(perm[i]);
    sh.y[static_cast<Eigen::Index>(i)] = pr.y[perm[i]];
    sh.w[static_cast<Eigen::Index>(i)] = pr.w[perm[i]];
    sh.offset[static_cast<Eigen::Index>(i)] = pr.offset[perm[i]];
  }
  auto shuffled = fit_logistic(dm(sh.X, {"(intercept)", "x1", "x2"}), sh.y, sh.w, sh.offset);
  for (int j = 0; j < 3; ++j) {
    CHECK(base.coef[j] == doctest::Approx(shuffled.coef[j]).epsilon(1e-8));
  }
}

TEST_CASE("fractional responses are accepted") {
  Eigen::MatrixXd x(6, 2);
  x << 1, 0, 1, 0, 1, 1, 1, 1, 1, 2, 1, 2;
  Eigen::VectorXd y(6);
  y << 0.2, 0.3, 0.5, 0.4, 0.7, 0.8;
  auto fit = fit_logistic(dm(x, {"(intercept)", "x"}), y);
  CHECK(fit.converged);
  CHECK(fit.coef[1] > 0.0);
}

TEST_CASE("saturating offset does not overflow") {
  Eigen::VectorXd y(4);
  y << 0, 1, 0, 1;
  auto fit = fit_logistic(design_matrix::intercept_only(4), y);  // coefficient ~ 0
  Eigen::VectorXd big = Eigen::VectorXd::Constant(4, 20.0);
  Eigen::VectorXd p = predict_proba(fit, design_matrix::intercept_only(4), big);
  for (int i = 0; i < 4; ++i) {
    CHECK(p[i] > 0.999);
    CHECK(p[i] < 1.0);
  }
  Eigen::VectorXd huge = Eigen::VectorXd::Constant(4, 800.0);
  Eigen::VectorXd ph = predict_proba(fit, design_matrix::intercept_only(4), huge);
  for (int i = 0; i < 4; ++i) CHECK(ph[i] < 1.0);
}

TEST_CASE("rank-deficient design is rejected") {
  Eigen::MatrixXd x(5, 3);
  for (int i = 0; i < 5; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i;
    x(i, 2) = 2.0 * i;  // collinear
  }
  Eigen::VectorXd y(5);
  y << 0, 1, 0, 1, 1;
  try {
    fit_logistic(dm(x, {"c0", "c1", "c2"}), y);
    FAIL("expected SingularDesign");
  } catch (const error& e) {
    CHECK(e.code() == errc::singular_design);
  }
}

TEST_CASE("separated data saturates without throwing") {
  Eigen::MatrixXd x(6, 2);
  Eigen::VectorXd y(6);
  for (int i = 0; i < 6; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i;
    y[i] = i >= 3 ? 1.0 : 0.0;
  }
  auto d = dm(x, {"(intercept)", "x"});
  auto fit = fit_logistic(d, y);  // score criterion met at large coefficients
  Eigen::VectorXd p = predict_proba(fit, d);
  CHECK(p[0] < 0.01);
  CHECK(p[5] > 0.99);
}

TEST_CASE("iteration cap reports nonconvergence with diagnostics") {
  Eigen::MatrixXd x(6, 2);
  Eigen::VectorXd y(6);
  for (int i = 0; i < 6; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = i;
    y[i] = i >= 3 ? 1.0 : 0.0;
  }
  logistic_options opts;
  opts.max_iter = 2;
  auto fit = fit_logistic(dm(x, {"(intercept)", "x"}), y, Eigen::VectorXd::Ones(6),
                          Eigen::VectorXd::Zero(6), opts);
  CHECK_FALSE(fit.converged);
  CHECK_FALSE(fit.message.empty());
  CHECK(fit.iterations == 2);
}

TEST_CASE("dimension mismatches are rejected") {
  Eigen::VectorXd y(3);
  y << 0, 1, 0;
  auto d = design_matrix::intercept_only(3);
  auto fit = fit_logistic(d, y);

  design_matrix wide;
  wide.values = Eigen::MatrixXd::Ones(3, 2);
  wide.labels = {"c0", "c1"};
  CHECK_THROWS_AS(predict_proba(fit, wide, Eigen::VectorXd::Zero(3)), error);
  CHECK_THROWS_AS(fit_logistic(d, y, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Zero(3)), error);
}
