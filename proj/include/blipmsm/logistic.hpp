#pragma once

#include <Eigen/Dense>
#include <string>

#include "blipmsm/design.hpp"

namespace blipmsm {

// Weighted quasi-binomial logistic fit. Responses may be fractional in [0,1]
// (needed when regressing targeted conditional means), weights nonnegative,
// and a fixed per-row offset is supported for fluctuation steps.
struct logistic_fit {
  Eigen::VectorXd coef;
  bool converged = false;
  int iterations = 0;
  double neg_loglik = 0.0;   // final weighted negative log-likelihood
  double max_score = 0.0;    // max |score component| at exit
  std::string message;
};

struct logistic_options {
  double score_tol = 1e-8;
  double coef_tol = 1e-10;
  int max_iter = 100;
  // Relative singular-value cutoff for the rank check on the weighted design.
  double rank_tol = 1e-10;
};

// IRLS maximizer of sum_i w_i [y_i log p_i + (1-y_i) log(1-p_i)],
// p_i = expit(x_i'beta + offset_i). Throws errc::singular_design when the
// weighted design is rank deficient; nonconvergence is reported in the fit,
// not thrown.
logistic_fit fit_logistic(const design_matrix& X, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& weights, const Eigen::VectorXd& offset,
                          const logistic_options& opts = {});

// Convenience overload: unit weights, zero offset.
logistic_fit fit_logistic(const design_matrix& X, const Eigen::VectorXd& y);

// expit(X beta + offset), strictly inside (0,1).
Eigen::VectorXd predict_proba(const logistic_fit& fit, const design_matrix& X,
                              const Eigen::VectorXd& offset);
Eigen::VectorXd predict_proba(const logistic_fit& fit, const design_matrix& X);

}  // namespace blipmsm
