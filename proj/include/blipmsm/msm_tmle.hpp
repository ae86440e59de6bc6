#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "blipmsm/cate.hpp"
#include "blipmsm/trial_data.hpp"

namespace blipmsm {

// Second-stage analysis rows: scope applied and missing a2 dropped, with the
// history H(s) assembled as named columns.
struct stage2_frame {
  Eigen::VectorXi a1, y1, a2, y2;
  Eigen::MatrixXd h;  // H(s) covariates
  std::vector<std::string> h_names;
  Eigen::VectorXd blip;    // frame-aligned B_n(H(r))
  std::vector<int> rows;   // indices into the source dataset

  int n() const { return static_cast<int>(a2.size()); }
};

stage2_frame make_stage2_frame(const trial_dataset& data, const blip_estimate& blip,
                               const analysis_config& config);

// Per-subject treatment probabilities g(1|H(s)) and g(0|H(s)).
struct g_fit {
  enum class source_kind { known_design, estimated };
  Eigen::VectorXd g1, g0;
  source_kind source = source_kind::estimated;
};

g_fit estimate_g(const stage2_frame& frame, const analysis_config& config);

// Initial and targeted outcome-regression predictions at both treatments.
struct q_fit {
  Eigen::VectorXd q1_init, q0_init;  // clipped to [q_bound, 1-q_bound]
  Eigen::VectorXd q1_star, q0_star;  // targeted (step-7 transforms)
  Eigen::Vector4d eps = Eigen::Vector4d::Zero();
  bool targeted = false;
  bool initial_converged = true;
  bool fluctuation_converged = false;
};

q_fit estimate_q2(const stage2_frame& frame, const analysis_config& config);

// Stabilizing weights h(a, B_n) per frame row (same for both arms here).
Eigen::VectorXd h_weights(const stage2_frame& frame, const analysis_config& config);

// Appendix-style 4-parameter fluctuation: pooled logistic of Y(s) on
// (1, A, B, A*B) with offset logit Q and weights h/g.
q_fit fluctuate(const q_fit& q, const g_fit& g, const stage2_frame& frame,
                const analysis_config& config);

// MSM projection: pooled fractional-response logistic of the stacked targeted
// predictions on (1, a, B, a*B) with weights h(a, B).
Eigen::Vector4d project_msm(const q_fit& q_targeted, const stage2_frame& frame,
                            const analysis_config& config);

struct ic_result {
  Eigen::MatrixXd dstar;   // n x 4 efficient influence curve values
  Eigen::Matrix4d c;       // normalizing matrix
  Eigen::Matrix4d sigma;   // E_n[D* D*^T]
};

ic_result influence_curve(const q_fit& q_targeted, const g_fit& g, const stage2_frame& frame,
                          const Eigen::Vector4d& beta, const analysis_config& config);

struct msm_fit {
  Eigen::Vector4d beta;
  Eigen::Matrix4d sigma;
  Eigen::Vector4d se, ci_lo, ci_hi, pvalue;
  Eigen::MatrixXd ic;  // n_analysis x 4

  h_mode h_used = h_mode::unit;
  Eigen::Vector4d eps = Eigen::Vector4d::Zero();
  double g_min = 1.0;
  bool converged = true;
  int n_analysis = 0;
  int n_total = 0;

  Eigen::VectorXd blip_all;    // per-subject blip on the full dataset
  Eigen::VectorXd blip_frame;  // frame-aligned blip
};

// Full pipeline: fit_blip -> estimate_g -> estimate_q2 -> fluctuate ->
// project_msm -> influence_curve, with Wald intervals and p-values.
msm_fit tmle_msm(const trial_dataset& data, const analysis_config& config);
msm_fit tmle_msm(const trial_dataset& data, const blip_estimate& blip,
                 const analysis_config& config);

// Lower-dimensional linear working model on the AIPW pseudo-outcome.
struct linear_msm_fit {
  Eigen::Vector2d beta;
  Eigen::Vector2d se, ci_lo, ci_hi, pvalue;
  Eigen::VectorXd pseudo_outcome;
  int n_analysis = 0;
};

linear_msm_fit linear_msm_transformed_outcome(const trial_dataset& data,
                                              const analysis_config& config);

// m_beta(a, b) on the logistic working model.
double msm_curve(const Eigen::Vector4d& beta, int a, double b);

}  // namespace blipmsm
