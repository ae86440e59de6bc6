#pragma once

#include <Eigen/Dense>
#include <string>

#include "blipmsm/trial_data.hpp"

namespace blipmsm {

struct effect_estimate {
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0, ci_hi = 0.0;
  double pvalue = 1.0;
  std::string label;
  Eigen::VectorXd ic;           // per-subject influence curve over the full sample
  double score_residual = 0.0;  // |E_n[clever covariate * (Y - Q*)]| at exit
};

// Point-treatment TMLE for the stage-1 risk difference E[Y(1)_1] - E[Y(1)_0].
effect_estimate ate_tmle(const trial_dataset& data, const analysis_config& config);

// Sequential-regression TMLE for E[Y(2)_{a(1)=1, a(2)=a2}].
effect_estimate two_stage_mean_tmle(const trial_dataset& data, const analysis_config& config,
                                    int a2);

// Continuation-vs-discontinuation risk difference from the two counterfactual
// means, with the IC difference.
effect_estimate second_stage_rd_tmle(const trial_dataset& data, const analysis_config& config);

// Stage-1 benefit minus second-stage harm, SE from the joint IC.
effect_estimate benefit_harm_contrast(const trial_dataset& data, const analysis_config& config);

}  // namespace blipmsm
