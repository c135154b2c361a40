#include "robust3s/regress.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "robust3s/distributions.hpp"
#include "robust3s/rng.hpp"

namespace robust3s {

namespace {

void check_finite(Eigen::Ref<const Matrix> X, const Vector& y) {
  for (Index j = 0; j < X.cols(); ++j)
    for (Index i = 0; i < X.rows(); ++i)
      if (!std::isfinite(X(i, j))) {
        std::ostringstream ss;
        ss << "non-finite value at row " << (i + 1) << ", column " << (j + 1);
        throw data_error(ss.str());
      }
  for (Index i = 0; i < y.size(); ++i)
    if (!std::isfinite(y[i])) {
      std::ostringstream ss;
      ss << "non-finite response at row " << (i + 1);
      throw data_error(ss.str());
    }
}

// Solve an SPD system with a conditioning guard.
Vector spd_solve(const Matrix& A, const Vector& rhs, const char* what) {
  Eigen::LDLT<Matrix> ldlt(A);
  bool ok = ldlt.info() == Eigen::Success;
  double dmin = 0.0, dmax = 0.0;
  if (ok) {
    dmin = ldlt.vectorD().minCoeff();
    dmax = ldlt.vectorD().maxCoeff();
    ok = dmin > dmax * 1e-13 && dmax > 0.0;
  }
  if (!ok) {
    std::ostringstream ss;
    ss << what << ": singular matrix (condition estimate "
       << (dmin > 0.0 ? dmax / dmin : std::numeric_limits<double>::infinity()) << ")";
    throw numerical_error(ss.str());
  }
  return ldlt.solve(rhs);
}

Matrix spd_solve_mat(const Matrix& A, const Matrix& rhs, const char* what) {
  Matrix out(A.rows(), rhs.cols());
  for (Index j = 0; j < rhs.cols(); ++j) out.col(j) = spd_solve(A, rhs.col(j), what);
  return out;
}

void finalize_inference(RegressionFit& fit) {
  const Index q = fit.beta.size() + 1;
  const double zq = norm_quantile(1.0 - fit.tau / 2.0);
  fit.ci.resize(static_cast<std::size_t>(q));
  fit.p_values.resize(q);
  for (Index j = 0; j < q; ++j) {
    const double est = j == 0 ? fit.intercept : fit.beta[j - 1];
    const double ase = std::sqrt(std::max(fit.asv(j, j), 0.0) / double(fit.n));
    fit.ci[static_cast<std::size_t>(j)] = {est - zq * ase, est + zq * ase};
    fit.p_values[j] = ase > 0.0 ? 2.0 * (1.0 - norm_cdf(std::abs(est) / ase))
                                : (est == 0.0 ? 1.0 : 0.0);
  }
}

}  // namespace

PartitionedMoments partition_moments(const Vector& m, const Matrix& S) {
  const Index p = m.size() - 1;
  if (p < 1 || S.rows() != p + 1 || S.cols() != p + 1)
    throw std::invalid_argument("partition_moments: shape mismatch");
  PartitionedMoments mom;
  mom.m_x = m.head(p);
  mom.m_y = m[p];
  mom.S_xx = S.topLeftCorner(p, p);
  mom.S_xy = S.topRightCorner(p, 1);
  mom.S_yy = S(p, p);
  return mom;
}

std::pair<double, Vector> plug_in_coefficients(const PartitionedMoments& mom) {
  const Vector beta = spd_solve(mom.S_xx, mom.S_xy, "plug_in_coefficients");
  const double alpha = mom.m_y - mom.m_x.dot(beta);
  return {alpha, beta};
}

Matrix impute_blp(Eigen::Ref<const Matrix> X, const FlagMatrix& U, const Vector& m,
                  const Matrix& S, std::vector<std::string>* warnings) {
  const Index n = X.rows(), p = X.cols();
  if (U.rows() != n || U.cols() != p || m.size() != p || S.rows() != p)
    throw std::invalid_argument("impute_blp: shape mismatch");
  Matrix Xhat = X;
  if ((U == 1).all()) return Xhat;

  std::string key(static_cast<std::size_t>(p), '0');
  std::vector<std::vector<Index>> rows_of;
  std::vector<std::string> keys;
  std::map<std::string, std::size_t> where;
  for (Index i = 0; i < n; ++i) {
    bool complete = true;
    for (Index j = 0; j < p; ++j) {
      key[static_cast<std::size_t>(j)] = U(i, j) != 0 ? '1' : '0';
      complete = complete && U(i, j) != 0;
    }
    if (complete) continue;
    auto it = where.find(key);
    if (it == where.end()) {
      where.emplace(key, keys.size());
      keys.push_back(key);
      rows_of.emplace_back();
      it = where.find(key);
    }
    rows_of[it->second].push_back(i);
  }

  for (std::size_t pi = 0; pi < keys.size(); ++pi) {
    std::vector<Index> obs, mis;
    for (Index j = 0; j < p; ++j)
      (keys[pi][static_cast<std::size_t>(j)] == '1' ? obs : mis).push_back(j);
    if (obs.empty()) {
      for (Index row : rows_of[pi])
        for (Index j = 0; j < p; ++j) Xhat(row, j) = m[j];
      if (warnings != nullptr) {
        std::ostringstream ss;
        ss << rows_of[pi].size() << " fully filtered row(s) imputed by the location estimate";
        warnings->push_back(ss.str());
      }
      continue;
    }
    Matrix Soo(static_cast<Index>(obs.size()), static_cast<Index>(obs.size()));
    Matrix Som(static_cast<Index>(obs.size()), static_cast<Index>(mis.size()));
    for (std::size_t a = 0; a < obs.size(); ++a) {
      for (std::size_t c = 0; c < obs.size(); ++c) Soo(static_cast<Index>(a), static_cast<Index>(c)) = S(obs[a], obs[c]);
      for (std::size_t c = 0; c < mis.size(); ++c) Som(static_cast<Index>(a), static_cast<Index>(c)) = S(obs[a], mis[c]);
    }
    const Matrix B = spd_solve_mat(Soo, Som, "impute_blp").transpose();  // mis x obs
    for (Index row : rows_of[pi]) {
      Vector xo(static_cast<Index>(obs.size()));
      for (std::size_t a = 0; a < obs.size(); ++a) xo[static_cast<Index>(a)] = X(row, obs[a]) - m[obs[a]];
      const Vector fill = B * xo;
      for (std::size_t c = 0; c < mis.size(); ++c) Xhat(row, mis[c]) = m[mis[c]] + fill[static_cast<Index>(c)];
    }
  }
  return Xhat;
}

Matrix asv_estimate(const RegressionFit& fit, Eigen::Ref<const Matrix> X, const Vector& y,
                    const FlagMatrix& U, const Vector& m, const Matrix& S, double breakdown) {
  const Index n = X.rows(), p = X.cols();
  const Index q = p + 1;

  if (fit.method == FitMethod::ls) {
    // Classical homoskedastic covariance, scaled to the ASV convention so
    // that sqrt(ASV_jj / n) is the textbook standard error.
    Matrix Xt(n, q);
    Xt.col(0).setOnes();
    Xt.rightCols(p) = X;
    Vector r = y - Xt.col(0) * fit.intercept - X * fit.beta;
    const double dof = double(n - q);
    if (dof <= 0.0) throw numerical_error("asv_estimate: no residual degrees of freedom");
    const double sig2 = r.squaredNorm() / dof;
    const Matrix M = Xt.transpose() * Xt / double(n);
    Matrix asv = sig2 * spd_solve_mat(M, Matrix::Identity(q, q), "asv_estimate");
    return 0.5 * (asv + asv.transpose()).eval();
  }

  if (!fit.scatter.has_value())
    throw std::invalid_argument("asv_estimate: robust fit carries no scatter estimate");

  // Best linear prediction of the filtered cells under the joint (p+1)-dim
  // estimate: the always-observed response takes part in the conditioning.
  // The residual second moment keeps the conditional variance the imputed
  // cells carry, beta' C_cond beta; squaring the conditional-mean residual
  // alone would understate the variance of rows with filtered cells.
  Matrix Zfull(n, q);
  Zfull.leftCols(p) = X;
  Zfull.col(p) = y;
  FlagMatrix Ufull(n, q);
  Ufull.leftCols(p) = U;
  Ufull.col(p).setOnes();
  const Matrix Xhat = impute_blp(Zfull, Ufull, m, S, nullptr).leftCols(p);

  Vector r2_extra = Vector::Zero(n);
  Vector d_extra = Vector::Zero(n);
  std::vector<const Matrix*> cemb_of(static_cast<std::size_t>(n), nullptr);
  std::vector<Matrix> cemb_store;
  {
    std::map<std::string, std::vector<Index>> pats;
    std::string key(static_cast<std::size_t>(q), '1');
    for (Index i = 0; i < n; ++i) {
      bool complete = true;
      for (Index j = 0; j < q; ++j) {
        key[static_cast<std::size_t>(j)] = Ufull(i, j) != 0 ? '1' : '0';
        complete = complete && Ufull(i, j) != 0;
      }
      if (!complete) pats[key].push_back(i);
    }
    cemb_store.reserve(pats.size());
    for (const auto& [pkey, rows] : pats) {
      std::vector<Index> obs, mis;
      for (Index j = 0; j < q; ++j)
        (pkey[static_cast<std::size_t>(j)] == '1' ? obs : mis).push_back(j);
      Matrix Soo(static_cast<Index>(obs.size()), static_cast<Index>(obs.size()));
      Matrix Som(static_cast<Index>(obs.size()), static_cast<Index>(mis.size()));
      Matrix Smm(static_cast<Index>(mis.size()), static_cast<Index>(mis.size()));
      for (std::size_t a = 0; a < obs.size(); ++a) {
        for (std::size_t c = 0; c < obs.size(); ++c) Soo(Index(a), Index(c)) = S(obs[a], obs[c]);
        for (std::size_t c = 0; c < mis.size(); ++c) Som(Index(a), Index(c)) = S(obs[a], mis[c]);
      }
      for (std::size_t a = 0; a < mis.size(); ++a)
        for (std::size_t c = 0; c < mis.size(); ++c) Smm(Index(a), Index(c)) = S(mis[a], mis[c]);
      const Matrix Ccond = Smm - spd_solve_mat(Soo, Som, "asv_estimate").transpose() * Som;
      Vector bmis(static_cast<Index>(mis.size()));
      for (std::size_t a = 0; a < mis.size(); ++a) bmis[Index(a)] = fit.beta[mis[a]];
      const double extra = std::max(bmis.dot(Ccond * bmis), 0.0);
      // Imputation covariance embedded on the (1, X) coordinates.
      Matrix Cemb = Matrix::Zero(q, q);
      for (std::size_t a = 0; a < mis.size(); ++a)
        for (std::size_t c = 0; c < mis.size(); ++c)
          Cemb(mis[a] + 1, mis[c] + 1) = Ccond(Index(a), Index(c));
      // Expected squared distance adds the trace correction for the
      // conditional spread of the imputed coordinates.
      Matrix Cz = Matrix::Zero(q, q);
      for (std::size_t a = 0; a < mis.size(); ++a)
        for (std::size_t c = 0; c < mis.size(); ++c)
          Cz(mis[a], mis[c]) = Ccond(Index(a), Index(c));
      Eigen::LLT<Matrix> lltS(S);
      double dtr = 0.0;
      if (lltS.info() == Eigen::Success)
        dtr = lltS.solve(Cz).trace();
      cemb_store.push_back(std::move(Cemb));
      for (Index row : rows) {
        r2_extra[row] = extra;
        d_extra[row] = std::max(dtr, 0.0);
        cemb_of[static_cast<std::size_t>(row)] = &cemb_store.back();
      }
    }
  }

  const double cq = consistency_constant(static_cast<int>(q), breakdown);
  const double sig2 = fit.sigma_eps * fit.sigma_eps;

  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success)
    throw numerical_error("asv_estimate: scatter not positive definite");

  Matrix C = Matrix::Zero(q, q);
  Matrix Dm = Matrix::Zero(q, q);
  Vector z(q), xt(q);
  for (Index i = 0; i < n; ++i) {
    z.head(p) = Xhat.row(i).transpose();
    z[p] = y[i];
    const double d = llt.matrixL().solve(z - m).squaredNorm() + d_extra[i];
    const double w = drho_bisquare(d / cq) / cq;
    const double wp = ddrho_bisquare(d / cq) / (cq * cq);
    xt[0] = 1.0;
    xt.tail(p) = Xhat.row(i).transpose();
    const double r = y[i] - fit.intercept - Xhat.row(i).dot(fit.beta);
    const double r2 = r * r + r2_extra[i];
    Matrix outer = xt * xt.transpose();
    if (cemb_of[static_cast<std::size_t>(i)] != nullptr) outer += *cemb_of[static_cast<std::size_t>(i)];
    C += (w + 2.0 / sig2 * wp * r2) * outer;
    Dm += w * w * r2 * outer;
  }
  C /= double(n);
  Dm /= double(n);

  const Matrix Cinv = spd_solve_mat(0.5 * (C + C.transpose()), Matrix::Identity(q, q), "asv_estimate");
  // Degrees-of-freedom inflation, the sandwich analogue of the classical
  // n - p - 1 residual-variance convention.
  const double dof = double(n) / double(n - q);
  Matrix asv = dof * Cinv * Dm * Cinv.transpose();
  return 0.5 * (asv + asv.transpose()).eval();
}

namespace {

RegressionFit fit_from_scatter(FitMethod method, Eigen::Ref<const Matrix> X, const Vector& y,
                               LocationScatter ls, std::optional<FilterReport> rep,
                               const ScatterConfig& cfg, double tau) {
  const Index n = X.rows(), p = X.cols();
  RegressionFit fit;
  fit.method = method;
  fit.tau = tau;
  fit.n = n;

  const PartitionedMoments mom = partition_moments(ls.m, ls.S);
  std::tie(fit.intercept, fit.beta) = plug_in_coefficients(mom);
  const double sig2 = mom.S_yy - mom.S_xy.dot(fit.beta);
  if (!(sig2 > 0.0)) throw numerical_error("fit: non-positive residual variance");
  fit.sigma_eps = std::sqrt(sig2);

  FlagMatrix U = FlagMatrix::Ones(n, p);
  if (rep.has_value()) U = rep->effective_flags;
  fit.scatter = std::move(ls);
  fit.filter_report = std::move(rep);
  fit.asv = asv_estimate(fit, X, y, U, fit.scatter->m, fit.scatter->S, cfg.breakdown);
  finalize_inference(fit);
  return fit;
}

}  // namespace

namespace detail {

RegressionFit fit_3s_prefiltered(Eigen::Ref<const Matrix> X, const Vector& y,
                                 const FilterReport& report, const ScatterConfig& cfg, double tau,
                                 std::uint64_t seed, const LocationScatter* warm_start) {
  const Index n = X.rows(), p = X.cols();
  Matrix Z(n, p + 1);
  Z.leftCols(p) = X;
  Z.col(p) = y;
  FlagMatrix U(n, p + 1);
  U.leftCols(p) = report.effective_flags;
  U.col(p).setOnes();  // the response is never filtered

  LocationScatter ls = gse(Z, U, cfg, derive_seed(seed, SeedStream::scatter), warm_start);
  return fit_from_scatter(FitMethod::three_s, X, y, std::move(ls), report, cfg, tau);
}

}  // namespace detail

RegressionFit fit_3s(Eigen::Ref<const Matrix> X, const Vector& y, double alpha_filter, double xi,
                     const ScatterConfig& cfg, double tau, std::uint64_t seed) {
  const Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_3s: response length mismatch");
  if (n <= 2 * (p + 1)) throw data_error("fit_3s: need n > 2 (p + 1) cases");
  check_finite(X, y);
  const FilterReport report = filter_matrix(X, alpha_filter, xi);
  return detail::fit_3s_prefiltered(X, y, report, cfg, tau, seed, nullptr);
}

RegressionFit fit_2s(Eigen::Ref<const Matrix> X, const Vector& y, const ScatterConfig& cfg,
                     double tau, std::uint64_t seed) {
  const Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_2s: response length mismatch");
  if (n <= 2 * (p + 1)) throw data_error("fit_2s: need n > 2 (p + 1) cases");
  check_finite(X, y);
  Matrix Z(n, p + 1);
  Z.leftCols(p) = X;
  Z.col(p) = y;
  LocationScatter ls = s_estimator_complete(Z, cfg, derive_seed(seed, SeedStream::scatter));
  return fit_from_scatter(FitMethod::two_s, X, y, std::move(ls), std::nullopt, cfg, tau);
}

RegressionFit fit_ls(Eigen::Ref<const Matrix> X, const Vector& y, double tau) {
  const Index n = X.rows(), p = X.cols();
  if (y.size() != n) throw std::invalid_argument("fit_ls: response length mismatch");
  if (n <= p + 1) throw data_error("fit_ls: need n > p + 1 cases");
  check_finite(X, y);

  RegressionFit fit;
  fit.method = FitMethod::ls;
  fit.tau = tau;
  fit.n = n;

  PartitionedMoments mom;
  mom.m_x = X.colwise().mean();
  mom.m_y = y.mean();
  const Matrix Xc = X.rowwise() - mom.m_x.transpose();
  const Vector yc = y.array() - mom.m_y;
  mom.S_xx = Xc.transpose() * Xc / double(n - 1);
  mom.S_xy = Xc.transpose() * yc / double(n - 1);
  mom.S_yy = yc.squaredNorm() / double(n - 1);
  std::tie(fit.intercept, fit.beta) = plug_in_coefficients(mom);

  const Vector r = yc - Xc * fit.beta;
  const double dof = double(n - p - 1);
  if (dof <= 0.0) throw numerical_error("fit_ls: no residual degrees of freedom");
  fit.sigma_eps = std::sqrt(r.squaredNorm() / dof);

  fit.asv = asv_estimate(fit, X, y, FlagMatrix::Ones(n, p), Vector(), Matrix());
  finalize_inference(fit);
  return fit;
}

}  // namespace robust3s
