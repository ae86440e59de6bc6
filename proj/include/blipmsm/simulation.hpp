#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "blipmsm/dgp.hpp"
#include "blipmsm/trial_data.hpp"

namespace blipmsm {

enum class scenario { sim1_dgp1, sim1_dgp2, sim2 };

scenario parse_scenario(const std::string& name);
std::string scenario_name(scenario s);

struct dgp_spec {
  scenario scen = scenario::sim1_dgp1;
  int n = 1815;
  std::uint64_t seed = 1;

  void validate() const;
};

// Two-stage SMART generators; deterministic given the seed, with per-subject
// draws in column order.
trial_dataset simulate_dgp1(int n, std::uint64_t seed, int q);
trial_dataset simulate_dgp2(int n, std::uint64_t seed);
trial_dataset simulate(const dgp_spec& spec);

// ----------------------------- oracle quantities ----------------------------

// All sim1 quantities are exact enumerations over the four baseline cells
// (0,0), (1,0), (0,1), (1,1).
struct sim1_oracle {
  static std::array<double, 4> blip_cells();
  static double mean_blip();                      // also the stage-1 risk difference
  static double second_stage_rd(int q);
  static std::pair<double, double> conditional_rds(int q);  // (blip>0, blip<0)
  static Eigen::Vector4d true_beta(int q);        // MSM projection at B_n = B_0
};

// sim2 quantities are Monte Carlo integrals over L(0) with the outcome layer
// integrated out analytically.
struct sim2_oracle_values {
  double first_stage_rd = 0.0;
  double second_stage_rd = 0.0;
  Eigen::Vector4d true_beta = Eigen::Vector4d::Zero();
};
sim2_oracle_values sim2_oracles(int n_oracle, std::uint64_t seed);

// True beta3 of the working MSM when B_n = B_0, per scenario.
double oracle_true_beta3(scenario s, int n_oracle, std::uint64_t seed);

// The estimator configuration each scenario uses in the paper's study.
analysis_config scenario_estimator_config(scenario s, std::uint64_t seed);

// ----------------------------- Monte Carlo harness --------------------------

struct mc_config {
  scenario scen = scenario::sim1_dgp1;
  int reps = 1000;
  int n = 1815;
  std::uint64_t seed = 1;
  int jobs = 0;          // 0 -> hardware concurrency
  int n_truth = 100000;  // per-replicate truth sample (sim2)
  int n_oracle = 1000000;
  bool null_y2 = false;  // replace Y(2) by fair coins
  double alpha = 0.05;
  double max_failure_rate = 0.01;

  void validate() const;
};

struct mc_replicate {
  int rep = 0;
  bool ok = false;
  std::string error_message;
  double beta3 = 0.0, se = 0.0, ci_lo = 0.0, ci_hi = 0.0, pvalue = 1.0;
  bool reject = false;
  double truth_da = 0.0;  // data-adaptive truth for this replicate
};

struct mc_report {
  mc_config config;
  std::vector<mc_replicate> replicates;
  int n_ok = 0;
  int failures = 0;

  double fixed_truth = 0.0;  // reference projection at B_n = B_0

  // errors against the replicate-specific data-adaptive truth
  double bias_da = 0.0, variance_da = 0.0, mse_da = 0.0, coverage_da = 0.0;
  // errors against the fixed reference truth
  double bias_fixed = 0.0, variance_fixed = 0.0, mse_fixed = 0.0, coverage_fixed = 0.0;

  double power = 0.0;  // percent rejecting H0: beta3 = 0
  double mean_se = 0.0;
  double elapsed_seconds = 0.0;
};

mc_report run_monte_carlo(const mc_config& config);

// JSON + per-replicate CSV + Table-1-shaped summary CSV.
void write_mc_outputs(const mc_report& report, const std::string& out_dir);

}  // namespace blipmsm
