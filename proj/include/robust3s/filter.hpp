#pragma once

#include <string>
#include <vector>

#include "robust3s/core.hpp"

// Consistent univariate tail filter. Each variable's upper and lower tail
// beyond the empirical alpha-quantile is standardized by the median
// exceedance and compared against the exponential reference
// F0(t) = 1 - exp(-log(2) t). The positive gap between F0 and the scaled-tail
// ECDF, maximized over t >= t0 = 1/log(2), gives the fraction of tail points
// flagged as cellwise outliers. On clean data satisfying the tail-dominance
// assumption (tails as light as or lighter than F0) the flagged fraction
// converges to zero almost surely.

namespace robust3s {

struct TailEstimates {
  double eta_upper = 0.0;  // empirical (1 - alpha)-quantile
  double s_upper = 0.0;    // median exceedance above eta_upper
  double eta_lower = 0.0;  // empirical alpha-quantile
  double s_lower = 0.0;    // median shortfall below eta_lower
  double alpha = 0.0;
  bool upper_degenerate = false;  // no points strictly beyond the quantile
  bool lower_degenerate = false;
};

struct TailFlagResult {
  double d_hat = 0.0;  // flagged tail proportion
  double t_hat = 0.0;  // threshold on the standardized scale
  double cutoff = 0.0; // eta + s * t_hat (upper) or eta - s * t_hat (lower)
  Index tail_size = 0;
};

struct VariableFilter {
  FlagVector flags;  // 1 = keep, 0 = filtered
  TailFlagResult upper;
  TailFlagResult lower;
  TailEstimates estimates;
  bool exempt = false;  // degenerate tail: variable not filtered
  std::string warning;
};

struct FilterReport {
  FlagMatrix flags;            // U
  FlagMatrix effective_flags;  // U* after the global switch
  std::vector<VariableFilter> per_variable;
  Index n_complete = 0;  // rows of U that are all ones
  bool switch_off = false;
  double xi = 0.01;
  double alpha = 0.20;
  std::vector<std::string> warnings;

  Index flagged_cells() const { return flags.size() - flags.sum(); }
};

/// Empirical quantile G_n^{-1}(a): the ceil(n a)-th order statistic, no
/// interpolation. Throws data_error on an empty sample.
double empirical_quantile(Eigen::Ref<const Vector> sample, double a);

/// Tail location/scale estimates for both tails at level alpha. The median
/// of exceedances is cross-checked against its quantile-difference form
/// G_n^{-1}(1 - alpha/2) - eta; the two coincide exactly whenever no sample
/// point ties with the quantile itself.
TailEstimates tail_estimates(Eigen::Ref<const Vector> sample, double alpha);

/// Flag proportion d = sup_{t >= t0} {F0(t) - Fhat(t)}^+ over the sorted
/// standardized tail, evaluated at t0 and at left limits of the ECDF jumps.
/// The threshold t_hat (clamped to t0) is the largest value kept when the
/// ceil(d * m) most extreme tail points are removed, with tie groups moving
/// as a whole; equivalently the smallest ECDF jump with Fhat >= 1 - d, made
/// robust to exactly tied outliers.
TailFlagResult flag_proportion(Eigen::Ref<const Vector> standardized_tail_sorted,
                               double eta = 0.0, double s = 1.0, bool upper = true);

VariableFilter filter_variable(Eigen::Ref<const Vector> sample, double alpha);

/// Column-wise filter with the global switch: when the fraction of rows
/// containing at least one flagged cell is at most xi, the filter is turned
/// off and U* is all ones.
FilterReport filter_matrix(Eigen::Ref<const Matrix> X, double alpha = 0.20, double xi = 0.01);

}  // namespace robust3s
