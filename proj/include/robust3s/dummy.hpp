#pragma once

#include <cstdint>

#include "robust3s/core.hpp"
#include "robust3s/regress.hpp"

// Mixed continuous + dummy covariate model
//
//   y = alpha + X beta_x + D beta_d + eps.
//
// Direct subsampling over [X D] tends to produce collinear elemental sets, so
// the coefficients are computed by alternating a no-intercept Huber
// M-regression on the dummy block with a 3S-regression on the continuous
// block, after an initial sweep that removes the dummy effect from X and y.

namespace robust3s {

/// No-intercept regression M-estimator with the Huber weight
/// w(r) = min(1, sqrt(2) s / |r|); the residual scale s is the MAD of the
/// initial least-squares residuals and stays fixed during the reweighting.
Vector m_regression(Eigen::Ref<const Matrix> D, const Vector& y);

struct SweepResult {
  Matrix X_swept;  // X - D T
  Vector y_swept;  // y - D t
  Vector t;        // p_d
  Matrix T;        // p_d x p_x
};

SweepResult initial_sweep(Eigen::Ref<const Matrix> X, Eigen::Ref<const Matrix> D, const Vector& y);

struct AlternatingOptions {
  double alpha_filter = 0.20;
  double xi = 0.01;
  double tau = 0.05;
  ScatterConfig scatter;
  int max_cycles = 20;  // K
  double tol = 1e-6;    // max absolute coefficient change between cycles
  std::uint64_t seed = 0;
};

struct MixedFit {
  double intercept = 0.0;
  Vector beta_x;
  Vector beta_d;
  int iterations = 0;
  bool converged = false;
  RegressionFit inner_fit;  // 3S fit from the final continuous step
};

MixedFit alternating_fit(Eigen::Ref<const Matrix> X, Eigen::Ref<const Matrix> D, const Vector& y,
                         const AlternatingOptions& opts = AlternatingOptions());

}  // namespace robust3s
