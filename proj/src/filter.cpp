#include "robust3s/filter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace robust3s {

namespace {

constexpr double kLog2 = 0.6931471805599453094;
constexpr double kT0 = 1.0 / kLog2;

double f0(double t) { return 1.0 - std::exp(-kLog2 * t); }

// Smallest integer >= v, tolerant of a couple of ulps so that rational
// levels like n * 0.8 resolve to the intended order statistic.
Index ceil_index(double v) {
  double r = std::round(v);
  if (std::abs(v - r) < 1e-9 * (1.0 + std::abs(v))) return static_cast<Index>(r);
  return static_cast<Index>(std::ceil(v));
}

Index quantile_index(Index n, double a) {
  Index k = ceil_index(double(n) * a);
  return std::min(std::max<Index>(k, 1), n);
}

std::vector<double> sorted_copy(Eigen::Ref<const Vector> sample) {
  std::vector<double> s(sample.data(), sample.data() + sample.size());
  std::stable_sort(s.begin(), s.end());
  return s;
}

TailEstimates tail_estimates_sorted(const std::vector<double>& s, double alpha) {
  const Index n = static_cast<Index>(s.size());
  TailEstimates est;
  est.alpha = alpha;

  // Upper tail.
  const Index ku = quantile_index(n, 1.0 - alpha);
  est.eta_upper = s[ku - 1];
  const auto first_above = std::upper_bound(s.begin(), s.end(), est.eta_upper);
  const Index mu = static_cast<Index>(s.end() - first_above);
  if (mu == 0) {
    est.upper_degenerate = true;
    est.s_upper = 0.0;
  } else {
    const Index med = (mu + 1) / 2;  // ceil(mu / 2)
    est.s_upper = *(first_above + (med - 1)) - est.eta_upper;
    if (mu == n - ku) {
      // No tie at the quantile: must match the quantile-difference form.
      const double s_q = s[quantile_index(n, 1.0 - alpha / 2.0) - 1] - est.eta_upper;
      if (s_q != est.s_upper)
        throw std::logic_error("tail_estimates: median/quantile forms of s disagree");
    }
  }

  // Lower tail, mirrored.
  const Index kl = quantile_index(n, alpha);
  est.eta_lower = s[kl - 1];
  const auto first_at = std::lower_bound(s.begin(), s.end(), est.eta_lower);
  const Index ml = static_cast<Index>(first_at - s.begin());
  if (ml == 0) {
    est.lower_degenerate = true;
    est.s_lower = 0.0;
  } else {
    const Index med = (ml + 1) / 2;
    // Shortfalls sorted ascending run through the sample values below eta
    // in descending order, so their median is eta - x_(ml - med + 1).
    est.s_lower = est.eta_lower - s[ml - med];
    if (ml == kl - 1) {
      const double s_q = est.eta_lower - s[quantile_index(n, alpha / 2.0) - 1];
      if (s_q != est.s_lower)
        throw std::logic_error("tail_estimates: median/quantile forms of s disagree");
    }
  }
  return est;
}

}  // namespace

double empirical_quantile(Eigen::Ref<const Vector> sample, double a) {
  if (sample.size() == 0) throw data_error("empty sample");
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("empirical_quantile: a outside (0,1)");
  auto s = sorted_copy(sample);
  return s[quantile_index(static_cast<Index>(s.size()), a) - 1];
}

TailEstimates tail_estimates(Eigen::Ref<const Vector> sample, double alpha) {
  if (sample.size() == 0) throw data_error("empty sample");
  if (!(alpha > 0.0 && alpha < 0.5)) throw std::invalid_argument("tail_estimates: alpha outside (0,0.5)");
  return tail_estimates_sorted(sorted_copy(sample), alpha);
}

TailFlagResult flag_proportion(Eigen::Ref<const Vector> standardized_tail_sorted,
                               double eta, double s, bool upper) {
  TailFlagResult res;
  const Index m = standardized_tail_sorted.size();
  res.tail_size = m;
  if (m == 0) {
    res.d_hat = 0.0;
    res.t_hat = std::numeric_limits<double>::infinity();
    res.cutoff = upper ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
    return res;
  }
  const double* t = standardized_tail_sorted.data();

  // ECDF value at t0 (right-continuous).
  const Index at_t0 =
      static_cast<Index>(std::upper_bound(t, t + m, kT0) - t);
  double d = f0(kT0) - double(at_t0) / double(m);
  // Left limits of jumps at or beyond t0.
  Index argmax = -1;
  for (Index i = 0; i < m; ++i) {
    if (t[i] < kT0) continue;
    const double gap = f0(t[i]) - double(i) / double(m);
    if (gap > d) {
      d = gap;
      argmax = i;
    }
  }
  d = std::max(d, 0.0);
  res.d_hat = d;

  if (d <= 0.0) {
    res.t_hat = std::max(t[m - 1], kT0);
  } else {
    // t_hat = min{ t : Fhat(t) >= 1 - d }, taken from the jump points. When
    // that lands on the very value whose left limit carries the supremum --
    // an exactly tied block of outliers -- the cutoff moves below the block
    // so the block is filtered whole; the inequality stays strict either
    // way, so points at the cutoff are kept.
    Index istar = std::min<Index>(std::max<Index>(ceil_index(double(m) * (1.0 - d)), 1), m);
    double thr = t[istar - 1];
    if (argmax >= 0 && t[argmax] == thr) {
      const Index below = static_cast<Index>(std::lower_bound(t, t + m, thr) - t);
      thr = below > 0 ? t[below - 1] : kT0;
    }
    res.t_hat = std::max(thr, kT0);
  }
  res.cutoff = upper ? eta + s * res.t_hat : eta - s * res.t_hat;
  return res;
}

VariableFilter filter_variable(Eigen::Ref<const Vector> sample, double alpha) {
  const Index n = sample.size();
  if (n == 0) throw data_error("empty sample");

  VariableFilter vf;
  auto sorted = sorted_copy(sample);
  vf.estimates = tail_estimates_sorted(sorted, alpha);
  vf.flags = FlagVector::Ones(n);

  if (vf.estimates.upper_degenerate || vf.estimates.lower_degenerate) {
    vf.exempt = true;
    vf.warning = "degenerate tail (s = 0): variable exempted from filtering";
    vf.upper.t_hat = vf.lower.t_hat = std::numeric_limits<double>::infinity();
    vf.upper.cutoff = std::numeric_limits<double>::infinity();
    vf.lower.cutoff = -std::numeric_limits<double>::infinity();
    return vf;
  }

  const auto& est = vf.estimates;
  const auto first_above = std::upper_bound(sorted.begin(), sorted.end(), est.eta_upper);
  const Index mu = static_cast<Index>(sorted.end() - first_above);
  Vector up(mu);
  for (Index i = 0; i < mu; ++i) up[i] = (*(first_above + i) - est.eta_upper) / est.s_upper;

  const auto first_at = std::lower_bound(sorted.begin(), sorted.end(), est.eta_lower);
  const Index ml = static_cast<Index>(first_at - sorted.begin());
  Vector low(ml);
  for (Index i = 0; i < ml; ++i) low[i] = (est.eta_lower - sorted[ml - 1 - i]) / est.s_lower;

  vf.upper = flag_proportion(up, est.eta_upper, est.s_upper, true);
  vf.lower = flag_proportion(low, est.eta_lower, est.s_lower, false);

  // Compare on the standardized scale, where the threshold is exactly one of
  // the jump values; the data-scale cutoff reconstructs the same boundary
  // only up to rounding.
  for (Index i = 0; i < n; ++i) {
    const double tu = (sample[i] - est.eta_upper) / est.s_upper;
    const double tl = (est.eta_lower - sample[i]) / est.s_lower;
    if (tu > vf.upper.t_hat || tl > vf.lower.t_hat) vf.flags[i] = 0;
  }
  return vf;
}

FilterReport filter_matrix(Eigen::Ref<const Matrix> X, double alpha, double xi) {
  const Index n = X.rows(), p = X.cols();
  if (n < p + 1) throw data_error("filter_matrix: need at least p + 1 rows");
  const Index min_rows = ceil_index(1.0 / alpha);
  if (n < min_rows) throw data_error("filter_matrix: too few rows for the tail level alpha");
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i)
      if (!std::isfinite(X(i, j))) {
        std::ostringstream ss;
        ss << "non-finite value at row " << (i + 1) << ", column " << (j + 1);
        throw data_error(ss.str());
      }

  FilterReport rep;
  rep.alpha = alpha;
  rep.xi = xi;
  rep.flags = FlagMatrix::Ones(n, p);
  rep.per_variable.reserve(static_cast<std::size_t>(p));
  for (Index j = 0; j < p; ++j) {
    VariableFilter vf = filter_variable(X.col(j), alpha);
    rep.flags.col(j) = vf.flags;
    if (!vf.warning.empty()) {
      std::ostringstream ss;
      ss << "column " << (j + 1) << ": " << vf.warning;
      rep.warnings.push_back(ss.str());
    }
    rep.per_variable.push_back(std::move(vf));
  }

  rep.n_complete = 0;
  for (Index i = 0; i < n; ++i)
    if ((rep.flags.row(i) == 1).all()) ++rep.n_complete;

  rep.switch_off = double(n - rep.n_complete) / double(n) <= xi;
  rep.effective_flags = rep.switch_off ? FlagMatrix::Ones(n, p) : rep.flags;
  return rep;
}

}  // namespace robust3s
