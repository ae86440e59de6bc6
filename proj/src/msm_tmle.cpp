#include "blipmsm/msm_tmle.hpp"

#include <algorithm>
#include <cmath>

#include "blipmsm/logistic.hpp"
#include "blipmsm/rng.hpp"
#include "blipmsm/stats.hpp"

namespace blipmsm {

namespace {

Eigen::Vector4d msm_row(double a, double b) { return {1.0, a, b, a * b}; }

double blip_spread(const Eigen::VectorXd& b) {
  return b.size() ? b.maxCoeff() - b.minCoeff() : 0.0;
}

constexpr double kDegenerateBlipTol = 1e-10;

}  // namespace

double msm_curve(const Eigen::Vector4d& beta, int a, double b) {
  return stats::expit(beta.dot(msm_row(a, b)));
}

stage2_frame make_stage2_frame(const trial_dataset& data, const blip_estimate& blip,
                               const analysis_config& config) {
  data.validate();
  if (blip.values.size() != data.n()) {
    throw error(errc::dimension_mismatch, "blip values do not align with dataset");
  }

  std::vector<int> keep;
  for (int i = 0; i < data.n(); ++i) {
    if (config.scope == stage2_scope::initiators && data.a1[i] != 1) continue;
    if (data.a2[i] == trial_dataset::a2_missing) continue;  // never re-randomized
    keep.push_back(i);
  }
  if (static_cast<int>(keep.size()) < 2) {
    throw error(errc::insufficient_data, "fewer than two usable second-stage rows");
  }

  stage2_frame f;
  const int m = static_cast<int>(keep.size());
  f.a1.resize(m);
  f.y1.resize(m);
  f.a2.resize(m);
  f.y2.resize(m);
  f.blip.resize(m);
  f.rows = keep;

  // H(s) = (L(0), W(1), Y(1)) plus A(1) when both arms are in scope.
  const bool include_a1 = config.scope == stage2_scope::all;
  const Eigen::Index hcols = data.baseline.cols() + data.w1.cols() + 1 + (include_a1 ? 1 : 0);
  f.h.resize(m, hcols);
  f.h_names = data.baseline_names;
  for (const auto& name : data.w1_names) f.h_names.push_back(name);
  f.h_names.push_back("y1");
  if (include_a1) f.h_names.push_back("a1");

  for (int j = 0; j < m; ++j) {
    const int i = keep[static_cast<std::size_t>(j)];
    f.a1[j] = data.a1[i];
    f.y1[j] = data.y1[i];
    f.a2[j] = data.a2[i];
    f.y2[j] = data.y2[i];
    f.blip[j] = blip.values[i];
    Eigen::Index c = 0;
    for (Eigen::Index b = 0; b < data.baseline.cols(); ++b) f.h(j, c++) = data.baseline(i, b);
    for (Eigen::Index q = 0; q < data.w1.cols(); ++q) f.h(j, c++) = data.w1(i, q);
    f.h(j, c++) = data.y1[i];
    if (include_a1) f.h(j, c++) = data.a1[i];
  }
  return f;
}

g_fit estimate_g(const stage2_frame& frame, const analysis_config& config) {
  const int n = frame.n();
  if (n == 0) throw error(errc::insufficient_data, "no second-stage rows");

  g_fit g;
  g.g1.resize(n);
  g.g0.resize(n);

  if (config.known_g2) {
    g.source = g_fit::source_kind::known_design;
    for (int i = 0; i < n; ++i) {
      auto it = config.known_g2->find({frame.a1[i], frame.y1[i]});
      if (it == config.known_g2->end()) {
        throw error(errc::invalid_config,
                    "known_g2 has no entry for cell (a1=" + std::to_string(frame.a1[i]) +
                        ", y1=" + std::to_string(frame.y1[i]) + ")");
      }
      g.g1[i] = it->second;
      g.g0[i] = 1.0 - it->second;
    }
  } else {
    g.source = g_fit::source_kind::estimated;
    design_matrix X;
    X.values.resize(n, 1 + static_cast<Eigen::Index>(config.g2_covariates.size()));
    X.values.col(0).setOnes();
    X.labels = {"(intercept)"};
    for (std::size_t c = 0; c < config.g2_covariates.size(); ++c) {
      auto it = std::find(frame.h_names.begin(), frame.h_names.end(), config.g2_covariates[c]);
      if (it == frame.h_names.end()) {
        throw error(errc::missing_column, "g2 covariate '" + config.g2_covariates[c] +
                                              "' not in H(s)");
      }
      X.values.col(static_cast<Eigen::Index>(c) + 1) =
          frame.h.col(it - frame.h_names.begin());
      X.labels.push_back(config.g2_covariates[c]);
    }
    Eigen::VectorXd a2 = frame.a2.cast<double>();
    logistic_fit fit = fit_logistic(X, a2);
    if (!fit.converged) {
      // Separation in the treatment model means an empty/deterministic cell.
      throw error(errc::positivity_violation,
                  "treatment-model fit did not converge (deterministic stratum?)");
    }
    g.g1 = predict_proba(fit, X);
    g.g0 = Eigen::VectorXd::Ones(n) - g.g1;
  }

  double gmin = 1.0;
  int bad_row = -1;
  for (int i = 0; i < n; ++i) {
    const double m = std::min(g.g1[i], g.g0[i]);
    if (m < gmin) {
      gmin = m;
      bad_row = i;
    }
  }
  if (gmin < config.q_bound) {
    throw error(errc::positivity_violation,
                "treatment probability " + std::to_string(gmin) + " below q_bound in stratum (a1=" +
                    std::to_string(frame.a1[bad_row]) + ", y1=" + std::to_string(frame.y1[bad_row]) +
                    ")");
  }
  return g;
}

q_fit estimate_q2(const stage2_frame& frame, const analysis_config& config) {
  const int n = frame.n();

  // Select H(s) columns for the outcome regression; empty list means all.
  std::vector<Eigen::Index> cols;
  if (config.q2_covariates.empty()) {
    for (Eigen::Index c = 0; c < frame.h.cols(); ++c) cols.push_back(c);
  } else {
    for (const auto& name : config.q2_covariates) {
      auto it = std::find(frame.h_names.begin(), frame.h_names.end(), name);
      if (it == frame.h_names.end()) {
        throw error(errc::missing_column, "q2 covariate '" + name + "' not in H(s)");
      }
      cols.push_back(it - frame.h_names.begin());
    }
  }

  learner_task task;
  task.features.resize(n, 1 + static_cast<Eigen::Index>(cols.size()));
  task.names = {"a2"};
  for (int i = 0; i < n; ++i) task.features(i, 0) = frame.a2[i];
  for (std::size_t c = 0; c < cols.size(); ++c) {
    task.features.col(static_cast<Eigen::Index>(c) + 1) = frame.h.col(cols[c]);
    task.names.push_back(frame.h_names[static_cast<std::size_t>(cols[c])]);
  }
  task.treatment_col = 0;

  Eigen::VectorXd y = frame.y2.cast<double>();
  Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
  std::vector<int> folds =
      make_folds(n, config.folds, derive_seed(config.seed, 2, stream::folds));
  ensemble_fit model = fit_super_learner(task, y, w, config.q2_library, folds, config.q_bound,
                                         derive_seed(config.seed, 2, stream::analysis));

  Eigen::MatrixXd x1 = task.features, x0 = task.features;
  x1.col(0).setOnes();
  x0.col(0).setZero();

  q_fit q;
  q.q1_init = model.predict(x1);
  q.q0_init = model.predict(x0);
  for (int i = 0; i < n; ++i) {
    q.q1_init[i] = stats::clip(q.q1_init[i], config.q_bound, 1.0 - config.q_bound);
    q.q0_init[i] = stats::clip(q.q0_init[i], config.q_bound, 1.0 - config.q_bound);
  }
  for (const auto& cand : model.candidates) q.initial_converged &= cand->converged;
  return q;
}

Eigen::VectorXd h_weights(const stage2_frame& frame, const analysis_config& config) {
  const int n = frame.n();
  if (config.h_weight_mode == h_mode::unit) return Eigen::VectorXd::Ones(n);

  // treatment prevalence: P(A(s)=1 | B_n) by logistic regression on the blip.
  design_matrix X;
  X.values.resize(n, 2);
  X.values.col(0).setOnes();
  X.values.col(1) = frame.blip;
  X.labels = {"(intercept)", "blip"};
  logistic_fit fit = fit_logistic(X, frame.a2.cast<double>());
  return predict_proba(fit, X);
}

q_fit fluctuate(const q_fit& q, const g_fit& g, const stage2_frame& frame,
                const analysis_config& config) {
  const int n = frame.n();
  if (q.q1_init.size() != n || g.g1.size() != n) {
    throw error(errc::dimension_mismatch, "inputs not aligned by subject");
  }

  const Eigen::VectorXd h = h_weights(frame, config);

  design_matrix X;
  X.values.resize(n, 4);
  X.labels = {"(intercept)", "a2", "blip", "a2:blip"};
  Eigen::VectorXd offset(n), weights(n);
  for (int i = 0; i < n; ++i) {
    const double a = frame.a2[i];
    const double b = frame.blip[i];
    X.values.row(i) = msm_row(a, b).transpose();
    const double ga = a == 1.0 ? g.g1[i] : g.g0[i];
    const double qa = a == 1.0 ? q.q1_init[i] : q.q0_init[i];
    offset[i] = stats::logit(qa);
    weights[i] = h[i] / ga;
  }

  logistic_fit fit = fit_logistic(X, frame.y2.cast<double>(), weights, offset);
  if (!fit.converged) {
    throw error(errc::nonconvergence,
                "fluctuation regression did not converge: " + fit.message +
                    " (max score " + std::to_string(fit.max_score) + ")");
  }

  q_fit out = q;
  out.eps = fit.coef;
  out.targeted = true;
  out.fluctuation_converged = true;
  out.q1_star.resize(n);
  out.q0_star.resize(n);
  for (int i = 0; i < n; ++i) {
    const double b = frame.blip[i];
    out.q1_star[i] = stats::expit_strict(stats::logit(q.q1_init[i]) + out.eps[0] + out.eps[1] +
                                         out.eps[2] * b + out.eps[3] * b);
    out.q0_star[i] =
        stats::expit_strict(stats::logit(q.q0_init[i]) + out.eps[0] + out.eps[2] * b);
  }
  return out;
}

Eigen::Vector4d project_msm(const q_fit& q_targeted, const stage2_frame& frame,
                            const analysis_config& config) {
  const int n = frame.n();
  if (!q_targeted.targeted || q_targeted.q1_star.size() != n) {
    throw error(errc::invalid_config, "project_msm needs targeted predictions");
  }
  if (blip_spread(frame.blip) < kDegenerateBlipTol) {
    throw error(errc::degenerate_blip, "blip is numerically constant; beta3 is undefined");
  }

  const Eigen::VectorXd h = h_weights(frame, config);

  design_matrix X;
  X.values.resize(2 * n, 4);
  X.labels = {"(intercept)", "a2", "blip", "a2:blip"};
  Eigen::VectorXd y(2 * n), w(2 * n);
  for (int i = 0; i < n; ++i) {
    X.values.row(i) = msm_row(0.0, frame.blip[i]).transpose();
    y[i] = q_targeted.q0_star[i];
    w[i] = h[i];
    X.values.row(n + i) = msm_row(1.0, frame.blip[i]).transpose();
    y[n + i] = q_targeted.q1_star[i];
    w[n + i] = h[i];
  }

  logistic_fit fit;
  try {
    fit = fit_logistic(X, y, w, Eigen::VectorXd::Zero(2 * n));
  } catch (const error& e) {
    if (e.code() == errc::singular_design) {
      throw error(errc::degenerate_blip, "projection design is singular (constant blip)");
    }
    throw;
  }
  if (!fit.converged) {
    throw error(errc::nonconvergence, "MSM projection did not converge: " + fit.message);
  }
  return fit.coef;
}

ic_result influence_curve(const q_fit& q_targeted, const g_fit& g, const stage2_frame& frame,
                          const Eigen::Vector4d& beta, const analysis_config& config) {
  const int n = frame.n();
  const Eigen::VectorXd h = h_weights(frame, config);

  ic_result out;
  Eigen::MatrixXd d(n, 4);
  Eigen::Matrix4d c = Eigen::Matrix4d::Zero();
  for (int i = 0; i < n; ++i) {
    const double b = frame.blip[i];
    const double a = frame.a2[i];
    const Eigen::Vector4d x1 = msm_row(1.0, b), x0 = msm_row(0.0, b);
    const Eigen::Vector4d xa = a == 1.0 ? x1 : x0;
    const double ga = a == 1.0 ? g.g1[i] : g.g0[i];
    const double qa = a == 1.0 ? q_targeted.q1_star[i] : q_targeted.q0_star[i];
    const double m1 = stats::expit(beta.dot(x1));
    const double m0 = stats::expit(beta.dot(x0));

    Eigen::Vector4d di = h[i] * (frame.y2[i] - qa) / ga * xa;
    di += h[i] * (q_targeted.q1_star[i] - m1) * x1;
    di += h[i] * (q_targeted.q0_star[i] - m0) * x0;
    d.row(i) = di.transpose();

    c += h[i] * m1 * (1.0 - m1) * x1 * x1.transpose();
    c += h[i] * m0 * (1.0 - m0) * x0 * x0.transpose();
  }
  c /= static_cast<double>(n);

  Eigen::FullPivLU<Eigen::Matrix4d> lu(c);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) {
    throw error(errc::singular_normalizer, "normalizing matrix C is singular");
  }
  Eigen::Matrix4d cinv = lu.inverse();

  out.dstar = d * cinv.transpose();
  out.c = c;
  out.sigma = out.dstar.transpose() * out.dstar / static_cast<double>(n);
  return out;
}

msm_fit tmle_msm(const trial_dataset& data, const blip_estimate& blip,
                 const analysis_config& config) {
  if (data.n() < 2) throw error(errc::insufficient_data, "need at least two subjects");

  stage2_frame frame = make_stage2_frame(data, blip, config);
  if (blip_spread(frame.blip) < kDegenerateBlipTol) {
    throw error(errc::degenerate_blip, "blip is numerically constant; beta3 is undefined");
  }

  g_fit g = estimate_g(frame, config);
  q_fit q = estimate_q2(frame, config);
  q_fit qstar = fluctuate(q, g, frame, config);
  Eigen::Vector4d beta = project_msm(qstar, frame, config);
  ic_result ic = influence_curve(qstar, g, frame, beta, config);

  msm_fit fit;
  fit.beta = beta;
  fit.sigma = ic.sigma;
  fit.ic = ic.dstar;
  fit.h_used = config.h_weight_mode;
  fit.eps = qstar.eps;
  fit.g_min = std::min(g.g1.minCoeff(), g.g0.minCoeff());
  fit.converged = qstar.fluctuation_converged && q.initial_converged;
  fit.n_analysis = frame.n();
  fit.n_total = data.n();
  fit.blip_all = blip.values;
  fit.blip_frame = frame.blip;

  const double n = static_cast<double>(frame.n());
  for (int j = 0; j < 4; ++j) {
    fit.se[j] = std::sqrt(ic.sigma(j, j) / n);
    fit.ci_lo[j] = beta[j] - stats::z975 * fit.se[j];
    fit.ci_hi[j] = beta[j] + stats::z975 * fit.se[j];
    fit.pvalue[j] = fit.se[j] > 0.0 ? stats::wald_pvalue(beta[j] / fit.se[j]) : 0.0;
  }
  return fit;
}

msm_fit tmle_msm(const trial_dataset& data, const analysis_config& config) {
  blip_estimate blip = fit_blip(data, config);
  return tmle_msm(data, blip, config);
}

linear_msm_fit linear_msm_transformed_outcome(const trial_dataset& data,
                                              const analysis_config& config) {
  blip_estimate blip = fit_blip(data, config);
  stage2_frame frame = make_stage2_frame(data, blip, config);
  g_fit g = estimate_g(frame, config);
  q_fit q = estimate_q2(frame, config);

  const int n = frame.n();
  Eigen::VectorXd dtilde(n);
  for (int i = 0; i < n; ++i) {
    const double a = frame.a2[i];
    const double ga = a == 1.0 ? g.g1[i] : g.g0[i];
    const double qa = a == 1.0 ? q.q1_init[i] : q.q0_init[i];
    dtilde[i] = (2.0 * a - 1.0) / ga * (frame.y2[i] - qa) + q.q1_init[i] - q.q0_init[i];
  }

  if (blip_spread(frame.blip) < kDegenerateBlipTol) {
    throw error(errc::degenerate_blip, "blip is numerically constant; the slope is undefined");
  }

  // Weighted least squares of the pseudo-outcome on (1, B_n), unit weights,
  // with the usual sandwich for the influence-curve variance.
  Eigen::MatrixXd X(n, 2);
  X.col(0).setOnes();
  X.col(1) = frame.blip;
  Eigen::Matrix2d m = X.transpose() * X / static_cast<double>(n);
  Eigen::FullPivLU<Eigen::Matrix2d> lu(m);
  if (!lu.isInvertible()) {
    throw error(errc::degenerate_blip, "pseudo-outcome design is singular");
  }
  Eigen::Matrix2d minv = lu.inverse();
  Eigen::Vector2d beta = minv * (X.transpose() * dtilde) / static_cast<double>(n);

  Eigen::Matrix2d meat = Eigen::Matrix2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector2d xi = X.row(i).transpose();
    const double e = dtilde[i] - xi.dot(beta);
    meat += e * e * xi * xi.transpose();
  }
  meat /= static_cast<double>(n);
  Eigen::Matrix2d sigma = minv * meat * minv.transpose();

  linear_msm_fit fit;
  fit.beta = beta;
  fit.pseudo_outcome = dtilde;
  fit.n_analysis = n;
  for (int j = 0; j < 2; ++j) {
    fit.se[j] = std::sqrt(sigma(j, j) / static_cast<double>(n));
    fit.ci_lo[j] = beta[j] - stats::z975 * fit.se[j];
    fit.ci_hi[j] = beta[j] + stats::z975 * fit.se[j];
    fit.pvalue[j] = fit.se[j] > 0.0 ? stats::wald_pvalue(beta[j] / fit.se[j]) : 0.0;
  }
  return fit;
}

}  // namespace blipmsm
