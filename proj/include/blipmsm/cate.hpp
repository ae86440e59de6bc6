#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "blipmsm/dgp.hpp"
#include "blipmsm/learners.hpp"
#include "blipmsm/trial_data.hpp"

namespace blipmsm {

// First-stage blip estimate B_n(H(r)) from single-stage Q-learning: an
// ensemble regression of Y(1) on (A(1), L(0)) differenced at the two
// counterfactual treatments.
struct blip_estimate {
  Eigen::VectorXd values;                 // per subject, |value| <= 1
  ensemble_fit model;                     // fitted outcome regression Q^r_n
  std::vector<std::string> history_cols;  // H(r) columns used
  double q_bound = 1e-4;

  // Counterfactual-prediction difference for new history rows.
  Eigen::VectorXd evaluate(const Eigen::MatrixXd& history) const;
};

blip_estimate fit_blip(const trial_dataset& data, const analysis_config& config);

// Closed-form blip of the named simulation design at one history point.
double true_blip(dgp::dgp_id id, const Eigen::VectorXd& baseline);

}  // namespace blipmsm
