#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "robust3s/core.hpp"
#include "robust3s/filter.hpp"
#include "robust3s/scatter.hpp"

// Plug-in regression from robust location/scatter. Three-step regression
// filters extreme cells, applies the generalized S-estimator to the joint
// (X, y) data with the response never filtered, and reads the coefficients
// off the partitioned estimate:
//
//   beta = S_xx^{-1} S_xy,   alpha = m_y - m_x' beta.
//
// Inference uses the sandwich asymptotic covariance C^{-1} D C^{-1} with
// bisquare weights evaluated at the squared distances of best-linear-
// prediction-imputed cases.

namespace robust3s {

enum class FitMethod { three_s, two_s, ls };

struct PartitionedMoments {
  Vector m_x;
  double m_y = 0.0;
  Matrix S_xx;
  Vector S_xy;
  double S_yy = 0.0;
};

/// Splits a (p+1)-dimensional location/scatter pair with the response last.
PartitionedMoments partition_moments(const Vector& m, const Matrix& S);

/// (alpha, beta) from partitioned moments; throws on singular S_xx.
std::pair<double, Vector> plug_in_coefficients(const PartitionedMoments& mom);

struct CoefficientInterval {
  double lo = 0.0;
  double hi = 0.0;
};

struct RegressionFit {
  FitMethod method = FitMethod::ls;
  double intercept = 0.0;
  Vector beta;
  double sigma_eps = 0.0;
  Matrix asv;  // (p+1) x (p+1), intercept first
  std::vector<CoefficientInterval> ci;
  Vector p_values;
  double tau = 0.05;
  Index n = 0;
  std::optional<LocationScatter> scatter;
  std::optional<FilterReport> filter_report;

  /// Standard error of coefficient j (0 = intercept): sqrt(asv_jj / n).
  double std_error(Index j) const { return std::sqrt(asv(j, j) / double(n)); }
};

/// Replaces filtered cells by their best linear prediction given the
/// observed cells of the same row under (m, S); observed cells pass through.
Matrix impute_blp(Eigen::Ref<const Matrix> X, const FlagMatrix& U, const Vector& m,
                  const Matrix& S, std::vector<std::string>* warnings = nullptr);

/// Estimated sandwich asymptotic covariance of (alpha, beta). For the LS
/// method this is the classical homoskedastic covariance.
Matrix asv_estimate(const RegressionFit& fit, Eigen::Ref<const Matrix> X, const Vector& y,
                    const FlagMatrix& U, const Vector& m, const Matrix& S,
                    double breakdown = 0.5);

RegressionFit fit_3s(Eigen::Ref<const Matrix> X, const Vector& y, double alpha_filter = 0.20,
                     double xi = 0.01, const ScatterConfig& cfg = ScatterConfig(),
                     double tau = 0.05, std::uint64_t seed = 0);

RegressionFit fit_2s(Eigen::Ref<const Matrix> X, const Vector& y,
                     const ScatterConfig& cfg = ScatterConfig(), double tau = 0.05,
                     std::uint64_t seed = 0);

RegressionFit fit_ls(Eigen::Ref<const Matrix> X, const Vector& y, double tau = 0.05);

namespace detail {
// Variant used by the alternating algorithm: reuses a fixed filter report
// for X and optionally warm-starts the scatter iteration.
RegressionFit fit_3s_prefiltered(Eigen::Ref<const Matrix> X, const Vector& y,
                                 const FilterReport& report, const ScatterConfig& cfg, double tau,
                                 std::uint64_t seed, const LocationScatter* warm_start);
}  // namespace detail

}  // namespace robust3s
