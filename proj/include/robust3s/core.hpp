#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace robust3s {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Cell flags: 1 = keep, 0 = filtered.
using FlagVector = Eigen::ArrayXi;
using FlagMatrix = Eigen::ArrayXXi;

/// Input violated a documented contract (shape, parse failure, NA where
/// none is allowed). CLI maps this to exit code 3.
class data_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure could not complete (singular design, non-positive
/// residual variance). CLI maps this to exit code 4.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  Vector y;
  Matrix X;  // continuous covariates
  Matrix D;  // dummy covariates (0 columns when absent)
  std::string y_name;
  std::vector<std::string> x_names;
  std::vector<std::string> d_names;
};

}  // namespace robust3s
