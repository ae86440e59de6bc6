#include "blipmsm/marginal_effects.hpp"

#include <algorithm>
#include <cmath>

#include "blipmsm/logistic.hpp"
#include "blipmsm/stats.hpp"

namespace blipmsm {

namespace {

void finish(effect_estimate& e) {
  const double n = static_cast<double>(e.ic.size());
  e.se = std::sqrt(stats::pop_variance(e.ic) / n);
  e.ci_lo = e.estimate - stats::z975 * e.se;
  e.ci_hi = e.estimate + stats::z975 * e.se;
  e.pvalue = e.se > 0.0 ? stats::wald_pvalue(e.estimate / e.se) : 0.0;
}

Eigen::MatrixXd pick_columns(const trial_dataset& data, const std::vector<std::string>& names) {
  Eigen::MatrixXd out(data.n(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    auto it = std::find(data.baseline_names.begin(), data.baseline_names.end(), names[c]);
    if (it != data.baseline_names.end()) {
      out.col(static_cast<Eigen::Index>(c)) =
          data.baseline.col(it - data.baseline_names.begin());
      continue;
    }
    auto iw = std::find(data.w1_names.begin(), data.w1_names.end(), names[c]);
    if (iw == data.w1_names.end()) {
      throw error(errc::missing_column, "adjustment covariate '" + names[c] + "' not found");
    }
    out.col(static_cast<Eigen::Index>(c)) = data.w1.col(iw - data.w1_names.begin());
  }
  return out;
}

double known_or_estimated_g1(const trial_dataset& data, const analysis_config& config) {
  if (config.known_g1) return *config.known_g1;
  double s = 0.0;
  for (int i = 0; i < data.n(); ++i) s += data.a1[i];
  return s / static_cast<double>(data.n());  // MLE of the intercept-only model
}

// P(A(2)=1 | A(1)=1, Y(1)=y1): design table when known, else the stratum MLE.
Eigen::VectorXd g2_among_initiators(const trial_dataset& data, const analysis_config& config,
                                    const std::vector<int>& rows) {
  Eigen::VectorXd g(static_cast<Eigen::Index>(rows.size()));
  if (config.known_g2) {
    for (std::size_t j = 0; j < rows.size(); ++j) {
      auto it = config.known_g2->find({1, data.y1[rows[j]]});
      if (it == config.known_g2->end()) {
        throw error(errc::invalid_config, "known_g2 lacks an initiator cell");
      }
      g[static_cast<Eigen::Index>(j)] = it->second;
    }
    return g;
  }
  double n_y[2] = {0.0, 0.0}, s_y[2] = {0.0, 0.0};
  for (int i : rows) {
    if (data.a2[i] == trial_dataset::a2_missing) continue;
    n_y[data.y1[i]] += 1.0;
    s_y[data.y1[i]] += data.a2[i];
  }
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const int y = data.y1[rows[j]];
    if (n_y[y] <= 0.0) throw error(errc::empty_cell, "no re-randomized subjects in a y1 stratum");
    g[static_cast<Eigen::Index>(j)] = s_y[y] / n_y[y];
  }
  return g;
}

void check_positivity(const Eigen::VectorXd& g, double q_bound, const char* what) {
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    if (g[i] < q_bound || g[i] > 1.0 - q_bound) {
      throw error(errc::positivity_violation, std::string(what) + " probability outside bounds");
    }
  }
}

}  // namespace

effect_estimate ate_tmle(const trial_dataset& data, const analysis_config& config) {
  data.validate();
  const int n = data.n();
  if (n < 2) throw error(errc::insufficient_data, "need at least two subjects");

  const double g1 = known_or_estimated_g1(data, config);
  if (g1 < config.q_bound || g1 > 1.0 - config.q_bound) {
    throw error(errc::positivity_violation, "stage-1 treatment probability outside bounds");
  }

  // Initial Q: logistic regression of Y(1) on (A(1), adjustment covariates).
  Eigen::MatrixXd adj = pick_columns(data, config.adjust_covariates);
  design_matrix X;
  X.values.resize(n, 2 + adj.cols());
  X.values.col(0).setOnes();
  X.values.col(1) = data.a1.cast<double>();
  X.values.rightCols(adj.cols()) = adj;
  X.labels = {"(intercept)", "a1"};
  for (const auto& name : config.adjust_covariates) X.labels.push_back(name);

  Eigen::VectorXd y = data.y1.cast<double>();
  logistic_fit qfit = fit_logistic(X, y);

  design_matrix X1 = X, X0 = X;
  X1.values.col(1).setOnes();
  X0.values.col(1).setZero();
  Eigen::VectorXd q1 = predict_proba(qfit, X1), q0 = predict_proba(qfit, X0);
  for (int i = 0; i < n; ++i) {
    q1[i] = stats::clip(q1[i], config.q_bound, 1.0 - config.q_bound);
    q0[i] = stats::clip(q0[i], config.q_bound, 1.0 - config.q_bound);
  }

  // Arm-wise targeting with weights 1/g; zeroes the clever-covariate score
  // (2A-1)/g * (Y - Q*) exactly.
  design_matrix F;
  F.values.resize(n, 2);
  F.values.col(0).setOnes();
  F.values.col(1) = data.a1.cast<double>();
  F.labels = {"(intercept)", "a1"};
  Eigen::VectorXd offset(n), w(n);
  for (int i = 0; i < n; ++i) {
    offset[i] = stats::logit(data.a1[i] == 1 ? q1[i] : q0[i]);
    w[i] = 1.0 / (data.a1[i] == 1 ? g1 : 1.0 - g1);
  }
  logistic_fit eps = fit_logistic(F, y, w, offset);
  if (!eps.converged) {
    throw error(errc::nonconvergence, "stage-1 fluctuation did not converge");
  }

  Eigen::VectorXd q1s(n), q0s(n);
  for (int i = 0; i < n; ++i) {
    q1s[i] = stats::expit_strict(stats::logit(q1[i]) + eps.coef[0] + eps.coef[1]);
    q0s[i] = stats::expit_strict(stats::logit(q0[i]) + eps.coef[0]);
  }

  effect_estimate e;
  e.label = "stage1_risk_difference";
  e.estimate = (q1s - q0s).mean();
  e.ic.resize(n);
  double score = 0.0;
  for (int i = 0; i < n; ++i) {
    const double clever = (2.0 * data.a1[i] - 1.0) / (data.a1[i] == 1 ? g1 : 1.0 - g1);
    const double resid = y[i] - (data.a1[i] == 1 ? q1s[i] : q0s[i]);
    e.ic[i] = clever * resid + (q1s[i] - q0s[i]) - e.estimate;
    score += clever * resid;
  }
  e.score_residual = std::fabs(score / n);
  finish(e);
  return e;
}

effect_estimate two_stage_mean_tmle(const trial_dataset& data, const analysis_config& config,
                                    int a2) {
  data.validate();
  if (a2 != 0 && a2 != 1) throw error(errc::invalid_config, "a2 must be 0 or 1");
  const int n = data.n();

  std::vector<int> initiators, cell;
  for (int i = 0; i < n; ++i) {
    if (data.a1[i] != 1) continue;
    initiators.push_back(i);
    if (data.a2[i] == a2) cell.push_back(i);
  }
  if (initiators.empty()) throw error(errc::empty_subset, "no subject has a1 = 1");
  if (cell.empty()) {
    throw error(errc::empty_cell, "no subjects in (a1=1, a2=" + std::to_string(a2) + ")");
  }

  const double g1 = known_or_estimated_g1(data, config);
  Eigen::VectorXd g2 = g2_among_initiators(data, config, initiators);
  check_positivity(g2, config.q_bound, "second-stage");

  // Inner regression: Y(2) on H(2) within the (a1=1, a2) cell.
  const Eigen::Index hcols = data.baseline.cols() + data.w1.cols() + 1;
  auto h_row = [&](int i, design_matrix& X, Eigen::Index r) {
    Eigen::Index c = 0;
    X.values(r, c++) = 1.0;
    for (Eigen::Index b = 0; b < data.baseline.cols(); ++b) X.values(r, c++) = data.baseline(i, b);
    for (Eigen::Index q = 0; q < data.w1.cols(); ++q) X.values(r, c++) = data.w1(i, q);
    X.values(r, c++) = data.y1[i];
  };
  design_matrix Xc;
  Xc.values.resize(static_cast<Eigen::Index>(cell.size()), 1 + hcols);
  Xc.labels = {"(intercept)"};
  for (const auto& nm : data.baseline_names) Xc.labels.push_back(nm);
  for (const auto& nm : data.w1_names) Xc.labels.push_back(nm);
  Xc.labels.push_back("y1");
  Eigen::VectorXd yc(static_cast<Eigen::Index>(cell.size()));
  for (std::size_t j = 0; j < cell.size(); ++j) {
    h_row(cell[j], Xc, static_cast<Eigen::Index>(j));
    yc[static_cast<Eigen::Index>(j)] = data.y2[cell[j]];
  }
  logistic_fit q2fit = fit_logistic(Xc, yc);

  // Predictions for every initiator, then the cell-weighted fluctuation.
  design_matrix Xi;
  Xi.values.resize(static_cast<Eigen::Index>(initiators.size()), 1 + hcols);
  Xi.labels = Xc.labels;
  for (std::size_t j = 0; j < initiators.size(); ++j) {
    h_row(initiators[j], Xi, static_cast<Eigen::Index>(j));
  }
  Eigen::VectorXd qbar2 = predict_proba(q2fit, Xi);
  for (Eigen::Index i = 0; i < qbar2.size(); ++i) {
    qbar2[i] = stats::clip(qbar2[i], config.q_bound, 1.0 - config.q_bound);
  }

  design_matrix ones1;
  Eigen::VectorXd y_fl(static_cast<Eigen::Index>(initiators.size()));
  Eigen::VectorXd w_fl = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(initiators.size()));
  Eigen::VectorXd off_fl(static_cast<Eigen::Index>(initiators.size()));
  for (std::size_t j = 0; j < initiators.size(); ++j) {
    const int i = initiators[j];
    const double g2a = a2 == 1 ? g2[static_cast<Eigen::Index>(j)]
                               : 1.0 - g2[static_cast<Eigen::Index>(j)];
    y_fl[static_cast<Eigen::Index>(j)] = data.y2[i];
    off_fl[static_cast<Eigen::Index>(j)] = stats::logit(qbar2[static_cast<Eigen::Index>(j)]);
    if (data.a2[i] == a2) w_fl[static_cast<Eigen::Index>(j)] = 1.0 / (g1 * g2a);
  }
  ones1 = design_matrix::intercept_only(static_cast<Eigen::Index>(initiators.size()));
  logistic_fit eps2 = fit_logistic(ones1, y_fl, w_fl, off_fl);
  if (!eps2.converged) throw error(errc::nonconvergence, "inner fluctuation did not converge");
  Eigen::VectorXd qbar2s(qbar2.size());
  for (Eigen::Index j = 0; j < qbar2.size(); ++j) {
    qbar2s[j] = stats::expit_strict(stats::logit(qbar2[j]) + eps2.coef[0]);
  }

  // Outer regression: targeted inner predictions on L(0) among initiators.
  design_matrix Bi;
  Bi.values.resize(static_cast<Eigen::Index>(initiators.size()), 1 + data.baseline.cols());
  Bi.values.col(0).setOnes();
  Bi.labels = {"(intercept)"};
  for (const auto& nm : data.baseline_names) Bi.labels.push_back(nm);
  for (std::size_t j = 0; j < initiators.size(); ++j) {
    Bi.values.row(static_cast<Eigen::Index>(j)).tail(data.baseline.cols()) =
        data.baseline.row(initiators[j]);
  }
  logistic_fit q1fit = fit_logistic(Bi, qbar2s);

  design_matrix Ball;
  Ball.values.resize(n, 1 + data.baseline.cols());
  Ball.values.col(0).setOnes();
  Ball.values.rightCols(data.baseline.cols()) = data.baseline;
  Ball.labels = Bi.labels;
  Eigen::VectorXd qbar1 = predict_proba(q1fit, Ball);
  for (int i = 0; i < n; ++i) qbar1[i] = stats::clip(qbar1[i], config.q_bound, 1.0 - config.q_bound);

  design_matrix ones2 = design_matrix::intercept_only(n);
  Eigen::VectorXd yo(n), wo = Eigen::VectorXd::Zero(n), offo(n);
  {
    std::size_t j = 0;
    for (int i = 0; i < n; ++i) {
      offo[i] = stats::logit(qbar1[i]);
      if (data.a1[i] == 1) {
        yo[i] = qbar2s[static_cast<Eigen::Index>(j)];
        wo[i] = 1.0 / g1;
        ++j;
      } else {
        yo[i] = 0.0;  // weight zero, value irrelevant
      }
    }
  }
  logistic_fit eps1 = fit_logistic(ones2, yo, wo, offo);
  if (!eps1.converged) throw error(errc::nonconvergence, "outer fluctuation did not converge");
  Eigen::VectorXd qbar1s(n);
  for (int i = 0; i < n; ++i) {
    qbar1s[i] = stats::expit_strict(stats::logit(qbar1[i]) + eps1.coef[0]);
  }

  effect_estimate e;
  e.label = "two_stage_mean_a2_" + std::to_string(a2);
  e.estimate = qbar1s.mean();
  e.ic.resize(n);
  double score2 = 0.0, score1 = 0.0;
  {
    std::size_t j = 0;
    for (int i = 0; i < n; ++i) {
      double term = qbar1s[i] - e.estimate;
      if (data.a1[i] == 1) {
        const Eigen::Index jj = static_cast<Eigen::Index>(j);
        const double g2a = a2 == 1 ? g2[jj] : 1.0 - g2[jj];
        const double inner = data.a2[i] == a2
                                 ? (data.y2[i] - qbar2s[jj]) / (g1 * g2a)
                                 : 0.0;
        const double outer = (qbar2s[jj] - qbar1s[i]) / g1;
        term += inner + outer;
        score2 += inner;
        score1 += outer;
        ++j;
      }
      e.ic[i] = term;
    }
  }
  e.score_residual = std::max(std::fabs(score2 / n), std::fabs(score1 / n));
  finish(e);
  return e;
}

effect_estimate second_stage_rd_tmle(const trial_dataset& data, const analysis_config& config) {
  effect_estimate m1 = two_stage_mean_tmle(data, config, 1);
  effect_estimate m0 = two_stage_mean_tmle(data, config, 0);
  effect_estimate e;
  e.label = "second_stage_risk_difference";
  e.estimate = m1.estimate - m0.estimate;
  e.ic = m1.ic - m0.ic;
  e.score_residual = std::max(m1.score_residual, m0.score_residual);
  finish(e);
  return e;
}

effect_estimate benefit_harm_contrast(const trial_dataset& data, const analysis_config& config) {
  effect_estimate benefit = ate_tmle(data, config);
  effect_estimate harm = second_stage_rd_tmle(data, config);
  effect_estimate e;
  e.label = "benefit_minus_harm";
  e.estimate = benefit.estimate - harm.estimate;
  e.ic = benefit.ic - harm.ic;
  e.score_residual = std::max(benefit.score_residual, harm.score_residual);
  finish(e);
  return e;
}

}  // namespace blipmsm
