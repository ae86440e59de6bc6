#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace blipmsm::stats {

// 97.5% standard normal quantile, used for all Wald intervals.
inline constexpr double z975 = 1.959963984540054;

inline double expit(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// expit clamped away from {0,1} so downstream logits stay finite.
inline double expit_strict(double x) {
  return std::clamp(expit(x), 1e-15, 1.0 - 1e-15);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

inline double clip(double p, double lo, double hi) { return std::clamp(p, lo, hi); }

inline double pnorm(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Two-sided normal p-value for a z statistic.
inline double wald_pvalue(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

inline double mean(const Eigen::VectorXd& v) { return v.size() ? v.mean() : 0.0; }

// Population variance (divides by n); keeps mse = bias^2 + variance an identity.
inline double pop_variance(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size());
}

inline double sample_sd(const Eigen::VectorXd& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace blipmsm::stats
