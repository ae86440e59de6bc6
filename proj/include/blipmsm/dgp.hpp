#pragma once

#include <cmath>

#include "blipmsm/stats.hpp"

// True structural conditional means for the two simulation designs. These are
// the single source of truth, shared by the generators, the oracle
// projections, and the closed-form blip evaluations.
namespace blipmsm::dgp {

enum class dgp_id { sim1, sim2 };

namespace sim1 {

inline double q1(double l1, double l2, double a) {
  return stats::expit(l1 + l2 + a + l1 * a + 2.0 * l2 * a - 5.0 * a * l1 * l2);
}

// Second-stage means for the two outcome variants q in {1,2}.
inline double q2(double l1, double a2, int q) {
  if (q == 1) return stats::expit(l1 * a2);
  return 1.0 - stats::expit((1.0 - a2) * (1.0 - l1));
}

inline double blip(double l1, double l2) { return q1(l1, l2, 1.0) - q1(l1, l2, 0.0); }

}  // namespace sim1

namespace sim2 {

inline double q1(double a, double l1, double l2, double l3) {
  return 1.0 - (0.5 * stats::expit(1.0 - l1 * l1 + 3.0 * l2 + 5.0 * l3 * l3 * a - 4.45 * a) +
                0.5 * stats::expit(0.5 + l3 + 2.0 * l1 * l2 + 3.0 * std::fabs(l2) * a - 1.5 * a));
}

inline double q2(double l1, double l2, double l3, double y1, double a2) {
  return 1.0 - stats::expit(std::pow(std::fabs(l1), y1) + y1 - 2.0 * a2 + 5.0 * a2 * l2 +
                            std::sin(l3 - 4.0));
}

inline double blip(double l1, double l2, double l3) {
  return q1(1.0, l1, l2, l3) - q1(0.0, l1, l2, l3);
}

}  // namespace sim2

}  // namespace blipmsm::dgp
