#include "blipmsm/logistic.hpp"

#include <cmath>
#include <set>

#include "blipmsm/stats.hpp"

namespace blipmsm {

const char* errc_name(errc c) {
  switch (c) {
    case errc::missing_column: return "MissingColumn";
    case errc::non_binary_value: return "NonBinaryValue";
    case errc::empty_dataset: return "EmptyDataset";
    case errc::empty_subset: return "EmptySubset";
    case errc::invalid_fold_count: return "InvalidFoldCount";
    case errc::singular_design: return "SingularDesign";
    case errc::nonconvergence: return "Nonconvergence";
    case errc::empty_library: return "EmptyLibrary";
    case errc::duplicate_learner: return "DuplicateLearner";
    case errc::degenerate_folds: return "DegenerateFolds";
    case errc::positivity_violation: return "PositivityViolation";
    case errc::dimension_mismatch: return "DimensionMismatch";
    case errc::unknown_dgp: return "UnknownDGP";
    case errc::empty_cell: return "EmptyCell";
    case errc::degenerate_blip: return "DegenerateBlip";
    case errc::singular_normalizer: return "SingularNormalizer";
    case errc::insufficient_data: return "InsufficientData";
    case errc::invalid_config: return "InvalidConfig";
    case errc::io_error: return "IoError";
  }
  return "UnknownError";
}

void design_matrix::validate() const {
  if (!values.allFinite()) {
    throw error(errc::invalid_config, "design matrix contains non-finite entries");
  }
  if (labels.size() != static_cast<std::size_t>(values.cols())) {
    throw error(errc::dimension_mismatch, "design labels do not match column count");
  }
  std::set<std::string> seen(labels.begin(), labels.end());
  if (seen.size() != labels.size()) {
    throw error(errc::invalid_config, "design labels are not unique");
  }
}

design_matrix design_matrix::intercept_only(Eigen::Index n) {
  design_matrix d;
  d.values = Eigen::MatrixXd::Ones(n, 1);
  d.labels = {"(intercept)"};
  return d;
}

namespace {

double weighted_nll(const Eigen::VectorXd& y, const Eigen::VectorXd& w, const Eigen::VectorXd& eta) {
  double nll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (w[i] == 0.0) continue;
    const double p = stats::expit_strict(eta[i]);
    nll -= w[i] * (y[i] * std::log(p) + (1.0 - y[i]) * std::log1p(-p));
  }
  return nll;
}

}  // namespace

logistic_fit fit_logistic(const design_matrix& X, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& weights, const Eigen::VectorXd& offset,
                          const logistic_options& opts) {
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (y.size() != n || weights.size() != n || offset.size() != n) {
    throw error(errc::dimension_mismatch, "response/weights/offset length must equal design rows");
  }
  if (n == 0 || d == 0) {
    throw error(errc::empty_dataset, "empty design in fit_logistic");
  }
  if (weights.minCoeff() < 0.0) {
    throw error(errc::invalid_config, "negative weights in fit_logistic");
  }
  if (weights.maxCoeff() <= 0.0) {
    throw error(errc::invalid_config, "weights are all zero in fit_logistic");
  }
  if ((y.array() < 0.0).any() || (y.array() > 1.0).any()) {
    throw error(errc::invalid_config, "responses must lie in [0,1]");
  }

  // Rank check on the weighted design at the starting point (beta = 0).
  {
    Eigen::VectorXd sw = weights.array().sqrt();
    Eigen::MatrixXd wx = sw.asDiagonal() * X.values;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(wx);
    qr.setThreshold(opts.rank_tol);
    if (qr.rank() < d) {
      throw error(errc::singular_design, "weighted design is rank deficient");
    }
  }

  logistic_fit fit;
  fit.coef = Eigen::VectorXd::Zero(d);

  Eigen::VectorXd eta = offset;
  double nll = weighted_nll(y, weights, eta);

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    fit.iterations = iter;

    Eigen::VectorXd p(n), irls_w(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p[i] = stats::expit(eta[i]);
      irls_w[i] = weights[i] * p[i] * (1.0 - p[i]);
    }
    Eigen::VectorXd resid = weights.array() * (y - p).array();
    Eigen::VectorXd score = X.values.transpose() * resid;
    fit.max_score = score.cwiseAbs().maxCoeff();

    if (fit.max_score < opts.score_tol) {
      fit.converged = true;
      break;
    }

    Eigen::MatrixXd info = X.values.transpose() * irls_w.asDiagonal() * X.values;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() <= 0.0).any()) {
      // Information collapsed mid-path (separation); keep the last iterate.
      fit.message = "information matrix not positive definite";
      break;
    }
    Eigen::VectorXd step = ldlt.solve(score);

    // Step halving keeps the deviance monotone.
    double scale = 1.0;
    Eigen::VectorXd cand_coef, cand_eta;
    double cand_nll = 0.0;
    bool accepted = false;
    for (int half = 0; half < 30; ++half) {
      cand_coef = fit.coef + scale * step;
      cand_eta = X.values * cand_coef + offset;
      cand_nll = weighted_nll(y, weights, cand_eta);
      if (cand_nll <= nll + 1e-12 * (1.0 + std::fabs(nll))) {
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) {
      fit.message = "step halving failed to improve the deviance";
      break;
    }

    const double coef_change = (cand_coef - fit.coef).cwiseAbs().maxCoeff();
    fit.coef = cand_coef;
    eta = cand_eta;
    nll = cand_nll;

    if (coef_change < opts.coef_tol) {
      // Recompute the exit score at the accepted iterate.
      Eigen::VectorXd pe(n);
      for (Eigen::Index i = 0; i < n; ++i) pe[i] = stats::expit(eta[i]);
      fit.max_score = (X.values.transpose() *
                       (weights.array() * (y - pe).array()).matrix()).cwiseAbs().maxCoeff();
      fit.converged = true;
      break;
    }
  }

  fit.neg_loglik = nll;
  if (!fit.converged && fit.message.empty()) {
    fit.message = "iteration cap reached";
  }
  return fit;
}

logistic_fit fit_logistic(const design_matrix& X, const Eigen::VectorXd& y) {
  return fit_logistic(X, y, Eigen::VectorXd::Ones(y.size()), Eigen::VectorXd::Zero(y.size()));
}

Eigen::VectorXd predict_proba(const logistic_fit& fit, const design_matrix& X,
                              const Eigen::VectorXd& offset) {
  if (X.cols() != fit.coef.size()) {
    throw error(errc::dimension_mismatch, "design columns do not match fitted coefficients");
  }
  if (offset.size() != X.rows()) {
    throw error(errc::dimension_mismatch, "offset length does not match design rows");
  }
  Eigen::VectorXd eta = X.values * fit.coef + offset;
  Eigen::VectorXd p(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) p[i] = stats::expit_strict(eta[i]);
  return p;
}

Eigen::VectorXd predict_proba(const logistic_fit& fit, const design_matrix& X) {
  return predict_proba(fit, X, Eigen::VectorXd::Zero(X.rows()));
}

}  // namespace blipmsm
