#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "blipmsm/errors.hpp"

namespace blipmsm {

// Dense design matrix with an explicit leading intercept column by convention.
struct design_matrix {
  Eigen::MatrixXd values;           // n x d
  std::vector<std::string> labels;  // length d, unique

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  void validate() const;

  // Intercept-only design of length n.
  static design_matrix intercept_only(Eigen::Index n);
};

}  // namespace blipmsm
