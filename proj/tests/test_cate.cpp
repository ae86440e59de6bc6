#include <doctest.h>

#include <random>

#include "blipmsm/cate.hpp"
#include "blipmsm/simulation.hpp"
#include "blipmsm/stats.hpp"

using namespace blipmsm;

namespace {

analysis_config sim1_config(std::uint64_t seed) {
  return scenario_estimator_config(scenario::sim1_dgp1, seed);
}

}  // namespace

TEST_CASE("true_blip evaluates the closed-form cells") {
  Eigen::VectorXd cell(2);
  cell << 1, 1;
  CHECK(true_blip(dgp::dgp_id::sim1, cell) ==
        doctest::Approx(stats::expit(1.0) - stats::expit(2.0)).epsilon(1e-12));
  cell << 0, 0;
  CHECK(true_blip(dgp::dgp_id::sim1, cell) == doctest::Approx(0.2310585786).epsilon(1e-8));

  Eigen::VectorXd wrong(3);
  wrong << 0, 0, 0;
  CHECK_THROWS_AS(true_blip(dgp::dgp_id::sim1, wrong), error);

  Eigen::VectorXd pt(3);
  pt << 0.4, 1.0, -0.2;
  CHECK(true_blip(dgp::dgp_id::sim2, pt) ==
        doctest::Approx(dgp::sim2::blip(0.4, 1.0, -0.2)).epsilon(1e-12));
}

TEST_CASE("saturated blip equals the empirical plug-in difference exactly") {
  trial_dataset data = simulate_dgp1(1200, 31, 1);
  analysis_config cfg = sim1_config(8);
  blip_estimate blip = fit_blip(data, cfg);

  for (int i = 0; i < data.n(); ++i) {
    const double l1 = data.baseline(i, 0), l2 = data.baseline(i, 1);
    double s1 = 0, n1 = 0, s0 = 0, n0 = 0;
    for (int j = 0; j < data.n(); ++j) {
      if (data.baseline(j, 0) != l1 || data.baseline(j, 1) != l2) continue;
      if (data.a1[j] == 1) {
        s1 += data.y1[j];
        n1 += 1;
      } else {
        s0 += data.y1[j];
        n0 += 1;
      }
    }
    REQUIRE(n1 > 0);
    REQUIRE(n0 > 0);
    const double plug_in = stats::clip(s1 / n1, cfg.q_bound, 1 - cfg.q_bound) -
                           stats::clip(s0 / n0, cfg.q_bound, 1 - cfg.q_bound);
    CHECK(blip.values[i] == doctest::Approx(plug_in).epsilon(1e-12));
  }
}

TEST_CASE("null outcome gives blips near zero") {
  trial_dataset data = simulate_dgp1(5000, 17, 1);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < data.n(); ++i) data.y1[i] = u(rng) < 0.5 ? 1 : 0;

  blip_estimate blip = fit_blip(data, sim1_config(4));
  CHECK(blip.values.cwiseAbs().maxCoeff() < 0.05);
}

TEST_CASE("blip converges to the DGP1 cells at large n") {
  trial_dataset data = simulate_dgp1(500000, 2024, 1);
  blip_estimate blip = fit_blip(data, sim1_config(6));

  const auto cells = sim1_oracle::blip_cells();
  Eigen::MatrixXd pts(4, 2);
  pts << 0, 0, 1, 0, 0, 1, 1, 1;
  Eigen::VectorXd est = blip.evaluate(pts);
  for (int c = 0; c < 4; ++c) {
    CHECK(est[c] == doctest::Approx(cells[static_cast<std::size_t>(c)]).epsilon(0.08));
    CHECK(std::fabs(est[c] - cells[static_cast<std::size_t>(c)]) < 0.01);
  }
  CHECK(std::fabs(est.mean() - 0.1384) < 0.01);
}

TEST_CASE("mean-only library yields an identically zero blip") {
  trial_dataset data = simulate_dgp1(400, 12, 1);
  analysis_config cfg = sim1_config(3);
  cfg.blip_library = {{.kind = learner_kind::mean}};
  blip_estimate blip = fit_blip(data, cfg);
  CHECK(blip.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("blip is antisymmetric under treatment recoding") {
  trial_dataset data = simulate_dgp1(900, 44, 1);
  analysis_config cfg = sim1_config(5);
  blip_estimate blip = fit_blip(data, cfg);

  trial_dataset flipped = data;
  for (int i = 0; i < data.n(); ++i) flipped.a1[i] = 1 - data.a1[i];
  blip_estimate blip_f = fit_blip(flipped, cfg);
  CHECK((blip.values + blip_f.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-arm data violates positivity") {
  trial_dataset data = simulate_dgp1(50, 3, 1);
  data.a1.setOnes();
  try {
    fit_blip(data, sim1_config(2));
    FAIL("expected PositivityViolation");
  } catch (const error& e) {
    CHECK(e.code() == errc::positivity_violation);
  }
}

TEST_CASE("blip magnitudes respect the binary-outcome bound") {
  trial_dataset data = simulate_dgp2(800, 15);
  analysis_config cfg = scenario_estimator_config(scenario::sim2, 21);
  blip_estimate blip = fit_blip(data, cfg);
  CHECK(blip.values.cwiseAbs().maxCoeff() <= 1.0);
  CHECK(blip.values.size() == data.n());
}
