#include <doctest.h>

#include <random>

#include "blipmsm/marginal_effects.hpp"
#include "blipmsm/simulation.hpp"
#include "blipmsm/stats.hpp"

using namespace blipmsm;

namespace {

analysis_config sim1_cfg(std::uint64_t seed) {
  analysis_config cfg = scenario_estimator_config(scenario::sim1_dgp1, seed);
  cfg.known_g1 = 0.5;
  cfg.known_g2 = std::map<std::pair<int, int>, double>{
      {{1, 1}, 0.5}, {{1, 0}, 0.5}, {{0, 1}, 0.5}, {{0, 0}, 0.5}};
  return cfg;
}

analysis_config sim2_cfg(std::uint64_t seed) {
  analysis_config cfg = scenario_estimator_config(scenario::sim2, seed);
  cfg.known_g1 = 1.0 / 3;
  cfg.known_g2 = std::map<std::pair<int, int>, double>{{{1, 1}, 1.0 / 3}, {{1, 0}, 1.0 / 2}};
  return cfg;
}

}  // namespace

TEST_CASE("unadjusted stage-1 TMLE equals the difference in arm means") {
  trial_dataset data = simulate_dgp1(2000, 5, 1);
  effect_estimate e = ate_tmle(data, sim1_cfg(1));

  double s1 = 0, n1 = 0, s0 = 0, n0 = 0;
  for (int i = 0; i < data.n(); ++i) {
    if (data.a1[i] == 1) {
      s1 += data.y1[i];
      n1 += 1;
    } else {
      s0 += data.y1[i];
      n0 += 1;
    }
  }
  CHECK(e.estimate == doctest::Approx(s1 / n1 - s0 / n0).epsilon(1e-9));
  CHECK(e.score_residual < 1e-8);
  CHECK(e.ci_lo < e.estimate);
  CHECK(e.ci_hi > e.estimate);
  CHECK(std::fabs(e.ic.mean()) < 1e-10);
}

TEST_CASE("stage-1 TMLE recovers the sim1 risk difference at large n") {
  trial_dataset data = simulate_dgp1(50000, 61, 1);
  effect_estimate e = ate_tmle(data, sim1_cfg(2));
  CHECK(std::fabs(e.estimate - 0.1384) < 0.01);
  CHECK(e.score_residual < 1e-8);
}

TEST_CASE("adjusted stage-1 TMLE stays consistent") {
  trial_dataset data = simulate_dgp1(50000, 62, 1);
  analysis_config cfg = sim1_cfg(3);
  cfg.adjust_covariates = {"l1", "l2"};
  effect_estimate e = ate_tmle(data, cfg);
  CHECK(std::fabs(e.estimate - 0.1384) < 0.01);
  CHECK(e.score_residual < 1e-8);
}

TEST_CASE("stage-1 TMLE recovers the sim2 risk difference at large n") {
  trial_dataset data = simulate_dgp2(50000, 63);
  effect_estimate e = ate_tmle(data, sim2_cfg(4));
  CHECK(std::fabs(e.estimate - 0.0554) < 0.01);
  CHECK(e.score_residual < 1e-8);
}

TEST_CASE("two-stage means reproduce the sim1 second-stage risk difference") {
  for (int q : {1, 2}) {
    trial_dataset data = simulate_dgp1(50000, 70 + static_cast<std::uint64_t>(q), q);
    effect_estimate rd = second_stage_rd_tmle(data, sim1_cfg(5));
    CHECK(std::fabs(rd.estimate - 0.1155) < 0.012);
    CHECK(rd.score_residual < 1e-8);
  }
}

TEST_CASE("two-stage means reproduce the sim2 second-stage risk difference") {
  trial_dataset data = simulate_dgp2(50000, 81);
  effect_estimate rd = second_stage_rd_tmle(data, sim2_cfg(6));
  CHECK(std::fabs(rd.estimate - 0.0564) < 0.012);
  CHECK(rd.score_residual < 1e-8);
}

TEST_CASE("degenerate all-success outcome pins the mean near the clip bound") {
  trial_dataset data = simulate_dgp1(800, 90, 1);
  for (int i = 0; i < data.n(); ++i) data.y2[i] = 1;
  analysis_config cfg = sim1_cfg(7);
  effect_estimate m1 = two_stage_mean_tmle(data, cfg, 1);
  effect_estimate m0 = two_stage_mean_tmle(data, cfg, 0);
  CHECK(m1.estimate > 1.0 - 2.0 * cfg.q_bound);
  CHECK(m0.estimate > 1.0 - 2.0 * cfg.q_bound);
  CHECK(std::fabs(m1.estimate - m0.estimate) < 1e-6);
}

TEST_CASE("empty treatment cell is reported") {
  trial_dataset data = simulate_dgp1(200, 91, 1);
  for (int i = 0; i < data.n(); ++i) {
    if (data.a1[i] == 1) data.a2[i] = 0;  // nobody continues
  }
  try {
    two_stage_mean_tmle(data, sim1_cfg(8), 1);
    FAIL("expected EmptyCell");
  } catch (const error& e) {
    CHECK(e.code() == errc::empty_cell);
  }
}

TEST_CASE("contrast SE equals the IC-difference arithmetic") {
  trial_dataset data = simulate_dgp1(3000, 92, 1);
  analysis_config cfg = sim1_cfg(9);
  effect_estimate benefit = ate_tmle(data, cfg);
  effect_estimate harm = second_stage_rd_tmle(data, cfg);
  effect_estimate contrast = benefit_harm_contrast(data, cfg);

  CHECK(contrast.estimate ==
        doctest::Approx(benefit.estimate - harm.estimate).epsilon(1e-12));
  Eigen::VectorXd ic = benefit.ic - harm.ic;
  const double se = std::sqrt(stats::pop_variance(ic) / ic.size());
  CHECK(contrast.se == doctest::Approx(se).epsilon(1e-12));
}

TEST_CASE("null generating process gives a null contrast") {
  trial_dataset data = simulate_dgp1(20000, 93, 1);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < data.n(); ++i) {
    data.y1[i] = u(rng) < 0.5 ? 1 : 0;
    data.y2[i] = u(rng) < 0.5 ? 1 : 0;
  }
  effect_estimate contrast = benefit_harm_contrast(data, sim1_cfg(10));
  CHECK(std::fabs(contrast.estimate) < 0.05);
  CHECK(contrast.ci_lo < 0.0);
  CHECK(contrast.ci_hi > 0.0);
}

TEST_CASE("sim2 contrast matches the difference of the oracle effects") {
  trial_dataset data = simulate_dgp2(50000, 94);
  effect_estimate contrast = benefit_harm_contrast(data, sim2_cfg(11));
  CHECK(std::fabs(contrast.estimate - (0.0554 - 0.0564)) < 0.02);
}
