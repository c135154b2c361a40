#include "robust3s/dummy.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "robust3s/filter.hpp"

namespace robust3s {

namespace {

constexpr double kMadToSigma = 1.482602218505602;  // 1 / Phi^{-1}(3/4)
constexpr double kSqrt2 = 1.4142135623730950488;

double mad(const Vector& r) {
  std::vector<double> v(r.data(), r.data() + r.size());
  auto med_of = [](std::vector<double> x) {
    const std::size_t k = (x.size() - 1) / 2;
    std::nth_element(x.begin(), x.begin() + k, x.end());
    double lo = x[k];
    if (x.size() % 2 == 0) {
      std::nth_element(x.begin(), x.begin() + k + 1, x.end());
      return 0.5 * (lo + x[k + 1]);
    }
    return lo;
  };
  const double med = med_of(v);
  for (double& x : v) x = std::abs(x - med);
  return kMadToSigma * med_of(v);
}

Vector weighted_ls(const Matrix& D, const Vector& y, const Vector& w) {
  const Matrix A = D.transpose() * w.asDiagonal() * D;
  Eigen::LDLT<Matrix> ldlt(A);
  if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= ldlt.vectorD().maxCoeff() * 1e-12)
    throw numerical_error("m_regression: rank-deficient dummy block");
  return ldlt.solve(D.transpose() * (w.array() * y.array()).matrix());
}

}  // namespace

Vector m_regression(Eigen::Ref<const Matrix> Din, const Vector& y) {
  const Matrix D = Din;
  const Index n = D.rows(), pd = D.cols();
  if (y.size() != n) throw std::invalid_argument("m_regression: response length mismatch");
  if (pd == 0) return Vector(0);
  if (n < pd) throw data_error("m_regression: more columns than rows");

  Vector beta = weighted_ls(D, y, Vector::Ones(n));
  Vector r = y - D * beta;
  const double s = mad(r);
  if (!(s > 0.0)) return beta;  // exact fit

  const double corner = kSqrt2 * s;
  for (int it = 0; it < 100; ++it) {
    Vector w(n);
    for (Index i = 0; i < n; ++i) {
      const double a = std::abs(r[i]);
      w[i] = a <= corner ? 1.0 : corner / a;
    }
    const Vector beta_new = weighted_ls(D, y, w);
    const double delta = (beta_new - beta).cwiseAbs().maxCoeff();
    beta = beta_new;
    r = y - D * beta;
    if (delta < 1e-8 * (1.0 + beta.cwiseAbs().maxCoeff())) break;
  }
  return beta;
}

SweepResult initial_sweep(Eigen::Ref<const Matrix> X, Eigen::Ref<const Matrix> D, const Vector& y) {
  SweepResult sw;
  sw.t = m_regression(D, y);
  sw.T.resize(D.cols(), X.cols());
  for (Index j = 0; j < X.cols(); ++j) sw.T.col(j) = m_regression(D, X.col(j));
  sw.X_swept = X - D * sw.T;
  sw.y_swept = y - D * sw.t;
  return sw;
}

MixedFit alternating_fit(Eigen::Ref<const Matrix> Xin, Eigen::Ref<const Matrix> Din,
                         const Vector& y, const AlternatingOptions& opts) {
  const Matrix X = Xin;
  const Matrix D = Din;
  const Index n = X.rows(), pd = D.cols();
  if (D.rows() != n && pd > 0) throw std::invalid_argument("alternating_fit: row mismatch");

  if (pd == 0) {
    MixedFit out;
    out.inner_fit = fit_3s(X, y, opts.alpha_filter, opts.xi, opts.scatter, opts.tau, opts.seed);
    out.intercept = out.inner_fit.intercept;
    out.beta_x = out.inner_fit.beta;
    out.beta_d = Vector(0);
    out.iterations = 0;
    out.converged = true;
    return out;
  }

  for (Index j = 0; j < pd; ++j)
    for (Index i = 0; i < n; ++i)
      if (D(i, j) != 0.0 && D(i, j) != 1.0)
        throw data_error("alternating_fit: dummy columns must be 0/1 valued");

  // The continuous covariates do not change across cycles, so their filter
  // is computed once and shared by every inner 3S fit.
  const FilterReport report = filter_matrix(X, opts.alpha_filter, opts.xi);

  // BLP of the filtered continuous cells under a fit's joint scatter, given
  // the observed cells and the response the fit was computed against.
  auto impute_from = [&](const RegressionFit& fit, const Matrix& Xdata, const Vector& resp) {
    const Index px = Xdata.cols();
    Matrix Z(n, px + 1);
    Z.leftCols(px) = Xdata;
    Z.col(px) = resp;
    FlagMatrix U(n, px + 1);
    U.leftCols(px) = fit.filter_report->effective_flags;
    U.col(px).setOnes();
    return impute_blp(Z, U, fit.scatter->m, fit.scatter->S, nullptr).leftCols(px).eval();
  };

  // Initialization on the swept data.
  const SweepResult sw = initial_sweep(X, D, y);
  RegressionFit fit = fit_3s(sw.X_swept, sw.y_swept, opts.alpha_filter, opts.xi, opts.scatter,
                             opts.tau, opts.seed);
  double alpha = fit.intercept;
  Vector beta_x = fit.beta;
  // Impute on the swept scale, then shift the dummy effect back in.
  Matrix Xhat = impute_from(fit, sw.X_swept, sw.y_swept) + D * sw.T;
  Vector beta_d = m_regression(D, y - Vector::Constant(n, alpha) - Xhat * beta_x);

  MixedFit out;
  bool converged = false;
  int cycle = 0;
  for (; cycle < opts.max_cycles; ++cycle) {
    const Vector y_adj = y - D * beta_d;
    const LocationScatter* warm = cycle > 0 ? &fit.scatter.value() : nullptr;
    fit = detail::fit_3s_prefiltered(X, y_adj, report, opts.scatter, opts.tau, opts.seed, warm);

    Xhat = impute_from(fit, X, y_adj);
    const Vector beta_d_new = m_regression(D, y - Vector::Constant(n, fit.intercept) - Xhat * fit.beta);

    double delta = std::abs(fit.intercept - alpha);
    delta = std::max(delta, (fit.beta - beta_x).cwiseAbs().maxCoeff());
    delta = std::max(delta, (beta_d_new - beta_d).cwiseAbs().maxCoeff());

    alpha = fit.intercept;
    beta_x = fit.beta;
    beta_d = beta_d_new;
    if (delta < opts.tol) {
      converged = true;
      ++cycle;
      break;
    }
  }

  out.intercept = alpha;
  out.beta_x = beta_x;
  out.beta_d = beta_d;
  out.iterations = cycle;
  out.converged = converged;
  out.inner_fit = std::move(fit);
  return out;
}

}  // namespace robust3s
