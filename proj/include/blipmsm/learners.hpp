#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "blipmsm/errors.hpp"

namespace blipmsm {

// Conditional-mean learners for P(Y=1 | A, L). Every learner sees the raw
// feature block [treatment, covariates...] and decides its own basis, so
// interaction learners can form A x L terms.
enum class learner_kind {
  mean,
  logistic_main,           // 1 + A + L
  logistic_interact,       // 1 + A + L_j + A*L_j for one covariate j
  logistic_interact_all,   // 1 + A + all L + all A*L
  logistic_saturated,      // cell means over the discrete (A, L) cells
  ridge_logistic,          // interact_all basis, L2 penalty, lambda by CV
  hinge_spline,            // forward-selected hinge basis, MARS-style surrogate
  bagged_trees,            // bootstrap-aggregated depth-limited trees
};

struct learner_spec {
  learner_kind kind = learner_kind::mean;
  int covariate = -1;  // logistic_interact: covariate index (0-based, excluding treatment)

  std::vector<double> lambda_grid{1.0, 0.3, 0.1, 0.03, 0.01};  // ridge_logistic
  int max_terms = 6;                                           // hinge_spline

  int n_trees = 100;  // bagged_trees
  int max_depth = 5;
  int min_leaf = 20;
  int mtry = 0;  // 0 -> ceil(sqrt(#features))

  std::string name() const;
};

struct learner_task {
  Eigen::MatrixXd features;        // n x d: column 0..d-1 raw features
  std::vector<std::string> names;  // length d
  int treatment_col = 0;

  Eigen::Index rows() const { return features.rows(); }
  Eigen::Index cols() const { return features.cols(); }
  void validate() const;
};

class candidate_model {
 public:
  virtual ~candidate_model() = default;
  // Probability predictions clipped to [q_bound, 1-q_bound].
  virtual Eigen::VectorXd predict(const Eigen::MatrixXd& features) const = 0;

  std::string name;
  bool converged = true;
};

using candidate_ptr = std::unique_ptr<candidate_model>;

candidate_ptr fit_candidate(const learner_spec& spec, const learner_task& task,
                            const Eigen::VectorXd& y, const Eigen::VectorXd& weights,
                            double q_bound, std::uint64_t seed);

// Train every candidate in the library on the full input. Candidates that do
// not converge are flagged, never dropped.
std::vector<candidate_ptr> fit_learner_library(const learner_task& task, const Eigen::VectorXd& y,
                                               const Eigen::VectorXd& weights,
                                               const std::vector<learner_spec>& specs,
                                               double q_bound, std::uint64_t seed);

// Cross-validated stacking ensemble: candidate CV predictions are combined by
// simplex weights minimizing the weighted Bernoulli CV risk.
struct ensemble_fit {
  std::vector<candidate_ptr> candidates;  // refit on all data
  std::vector<std::string> names;
  Eigen::VectorXd weights;   // nonnegative, sums to 1
  Eigen::VectorXd cv_risks;  // per-candidate CV negative log-likelihood
  double ensemble_cv_risk = 0.0;
  double q_bound = 1e-4;

  Eigen::VectorXd predict(const Eigen::MatrixXd& features) const;
};

ensemble_fit fit_super_learner(const learner_task& task, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& weights,
                               const std::vector<learner_spec>& specs,
                               const std::vector<int>& folds, double q_bound, std::uint64_t seed);

}  // namespace blipmsm
