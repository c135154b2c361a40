#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "robust3s/distributions.hpp"
#include "robust3s/regress.hpp"
#include "robust3s/rng.hpp"

using namespace robust3s;

namespace {

Matrix random_normal(Index n, Index q, std::uint64_t seed) {
  Rng rng(seed);
  Matrix Z(n, q);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < q; ++j) Z(i, j) = normal_draw(rng);
  return Z;
}

bool bitwise_equal(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) return false;
  for (Index i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("plug-in coefficients: zero covariance and scalar case") {
  PartitionedMoments mom;
  mom.m_x = Vector::Constant(3, 1.5);
  mom.m_y = 4.0;
  mom.S_xx = Matrix::Identity(3, 3);
  mom.S_xy = Vector::Zero(3);
  mom.S_yy = 2.0;
  auto [a0, b0] = plug_in_coefficients(mom);
  CHECK(b0.cwiseAbs().maxCoeff() == 0.0);
  CHECK(a0 == 4.0);

  PartitionedMoments m1;
  m1.m_x = Vector::Constant(1, 2.0);
  m1.m_y = 3.0;
  m1.S_xx = Matrix::Constant(1, 1, 1.0);
  m1.S_xy = Vector::Constant(1, 0.5);
  m1.S_yy = 1.0;
  auto [a1, b1] = plug_in_coefficients(m1);
  CHECK(b1[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(a1 == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("plug-in coefficients: residual of the normal equations") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    const Index p = 2 + static_cast<Index>(uniform_below(rng, 8));
    const Matrix A = random_normal(p + 4, p, 500 + rep);
    PartitionedMoments mom;
    mom.S_xx = A.transpose() * A / double(p + 4);
    mom.S_xy = random_normal(p, 1, 600 + rep).col(0);
    mom.m_x = random_normal(p, 1, 700 + rep).col(0);
    mom.m_y = normal_draw(rng);
    mom.S_yy = 1.0;
    auto [alpha, beta] = plug_in_coefficients(mom);
    (void)alpha;
    CHECK((mom.S_xx * beta - mom.S_xy).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("plug-in coefficients: singular S_xx is reported") {
  PartitionedMoments mom;
  mom.m_x = Vector::Zero(2);
  mom.m_y = 0.0;
  mom.S_xx = Matrix::Ones(2, 2);  // rank one
  mom.S_xy = Vector::Ones(2);
  mom.S_yy = 1.0;
  CHECK_THROWS_WITH_AS(plug_in_coefficients(mom), doctest::Contains("singular"), numerical_error);
}

TEST_CASE("BLP imputation: identity flag matrix and diagonal scatter") {
  const Matrix X = random_normal(40, 3, 9);
  const Vector m = Vector::Constant(3, 7.0);
  CHECK((impute_blp(X, FlagMatrix::Ones(40, 3), m, Matrix::Identity(3, 3)) - X)
            .cwiseAbs()
            .maxCoeff() == 0.0);

  FlagMatrix U = FlagMatrix::Ones(40, 3);
  U(5, 1) = 0;
  U(11, 0) = 0;
  const Matrix Xh = impute_blp(X, U, m, Matrix::Identity(3, 3));
  CHECK(Xh(5, 1) == 7.0);  // zero cross-covariance: filtered cell -> location
  CHECK(Xh(11, 0) == 7.0);
  CHECK(Xh(5, 0) == X(5, 0));
}

TEST_CASE("BLP imputation: bivariate regression fill-in") {
  Matrix S(2, 2);
  S << 1.0, 0.8, 0.8, 1.0;
  Matrix X(1, 2);
  X << 1.0, -99.0;  // second cell filtered
  FlagMatrix U(1, 2);
  U << 1, 0;
  const Matrix Xh = impute_blp(X, U, Vector::Zero(2), S);
  CHECK(Xh(0, 1) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(Xh(0, 0) == 1.0);
}

TEST_CASE("BLP imputation: fully filtered row falls back to the location") {
  Matrix S(2, 2);
  S << 1.0, 0.3, 0.3, 1.0;
  Matrix X = random_normal(5, 2, 21);
  FlagMatrix U = FlagMatrix::Ones(5, 2);
  U.row(3).setZero();
  std::vector<std::string> warnings;
  const Matrix Xh = impute_blp(X, U, Vector::Constant(2, -1.0), S, &warnings);
  CHECK(Xh(3, 0) == -1.0);
  CHECK(Xh(3, 1) == -1.0);
  CHECK(warnings.size() == 1);
}

TEST_CASE("least squares: exact line recovered to machine precision") {
  Vector x(6);
  x << -2, -1, 0, 1, 2, 5;
  const Vector y = 3.0 * x;
  const RegressionFit fit = fit_ls(x, y);
  CHECK(fit.beta[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(std::abs(fit.intercept) < 1e-13);
  CHECK(fit.p_values[1] < 1e-6);
}

TEST_CASE("least squares: matches the normal-equation oracle") {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 60, p = 4;
    const Matrix X = random_normal(n, p, 40 + rep);
    Vector y(n);
    for (Index i = 0; i < n; ++i) y[i] = 0.5 + X.row(i).sum() + 0.3 * normal_draw(rng);
    const RegressionFit fit = fit_ls(X, y);

    Matrix Xt(n, p + 1);
    Xt.col(0).setOnes();
    Xt.rightCols(p) = X;
    const Vector theta = (Xt.transpose() * Xt).fullPivLu().solve(Xt.transpose() * y);
    CHECK(std::abs(fit.intercept - theta[0]) < 1e-10);
    CHECK((fit.beta - theta.tail(p)).cwiseAbs().maxCoeff() < 1e-10);

    // Residual moment identities.
    const Vector r = y - Vector::Constant(n, fit.intercept) - X * fit.beta;
    CHECK(std::abs(r.sum()) < 1e-8);
    CHECK((X.transpose() * r).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("least squares: independent response stays within 3 standard errors") {
  Rng rng(6);
  const Index n = 500, p = 3;
  const Matrix X = random_normal(n, p, 77);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = normal_draw(rng);
  const RegressionFit fit = fit_ls(X, y);
  for (Index j = 0; j < p; ++j) CHECK(std::abs(fit.beta[j]) < 3.0 * fit.std_error(j + 1));
}

TEST_CASE("3S regression: slope recovery over 20 seeds") {
  int hits = 0;
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(9000 + seed);
    const Index n = 2000;
    Matrix X(n, 1);
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
      X(i, 0) = normal_draw(rng);
      y[i] = 2.0 * X(i, 0) + 0.1 * normal_draw(rng);
    }
    const RegressionFit fit = fit_3s(X, y, 0.2, 0.01, ScatterConfig(), 0.05, seed);
    if (fit.beta[0] > 1.9 && fit.beta[0] < 2.1) ++hits;
  }
  CHECK(hits >= 19);
}

TEST_CASE("3S equals 2S exactly whenever the filter switch is off") {
  // xi = 1 forces the switch off regardless of the flags.
  const Index n = 120, p = 3;
  const Matrix X = random_normal(n, p, 15);
  Rng rng(15);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = 1.0 + X(i, 0) - 2.0 * X(i, 2) + 0.5 * normal_draw(rng);

  const RegressionFit f3 = fit_3s(X, y, 0.2, 1.0, ScatterConfig(), 0.05, 31);
  const RegressionFit f2 = fit_2s(X, y, ScatterConfig(), 0.05, 31);
  REQUIRE(f3.filter_report.has_value());
  CHECK(f3.filter_report->switch_off);
  CHECK(f3.intercept == f2.intercept);
  CHECK(bitwise_equal(f3.beta, f2.beta));
  CHECK(f3.sigma_eps == f2.sigma_eps);
  CHECK((f3.asv - f2.asv).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit inference invariants") {
  Rng rng(18);
  const Index n = 400, p = 4;
  const Matrix X = random_normal(n, p, 19);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = X(i, 1) - X(i, 3) + 0.5 * normal_draw(rng);

  for (int which = 0; which < 3; ++which) {
    RegressionFit fit;
    if (which == 0)
      fit = fit_3s(X, y, 0.2, 0.01, ScatterConfig(), 0.05, 3);
    else if (which == 1)
      fit = fit_2s(X, y, ScatterConfig(), 0.05, 3);
    else
      fit = fit_ls(X, y);

    CHECK(fit.sigma_eps > 0.0);
    CHECK((fit.asv - fit.asv.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::SelfAdjointEigenSolver<Matrix> es(fit.asv, Eigen::EigenvaluesOnly);
    CHECK(es.eigenvalues().minCoeff() > -1e-8 * es.eigenvalues().maxCoeff());

    const double zq = norm_quantile(1.0 - fit.tau / 2.0);
    for (Index j = 0; j <= p; ++j) {
      const double est = j == 0 ? fit.intercept : fit.beta[j - 1];
      const double half = zq * std::sqrt(fit.asv(j, j) / double(n));
      CHECK(fit.ci[std::size_t(j)].lo == est - half);  // half-width identity, exact
      CHECK(fit.ci[std::size_t(j)].hi == est + half);
      CHECK(fit.ci[std::size_t(j)].lo <= fit.ci[std::size_t(j)].hi);
      CHECK(fit.p_values[j] >= 0.0);
      CHECK(fit.p_values[j] <= 1.0);
    }
  }
}

TEST_CASE("3S regression: column scale equivariance") {
  const Index n = 200, p = 3;
  const Matrix X = random_normal(n, p, 25);
  Rng rng(26);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = 2.0 * X(i, 0) - X(i, 1) + 0.4 * normal_draw(rng);

  Matrix Xs = X;
  const double a = 3.7;
  Xs.col(1) *= a;
  const RegressionFit f1 = fit_3s(X, y, 0.2, 0.01, ScatterConfig(), 0.05, 8);
  const RegressionFit f2 = fit_3s(Xs, y, 0.2, 0.01, ScatterConfig(), 0.05, 8);
  CHECK(std::abs(f2.beta[1] - f1.beta[1] / a) < 1e-8 * (1.0 + std::abs(f1.beta[1])));
  CHECK(std::abs(f2.beta[0] - f1.beta[0]) < 1e-8);
  CHECK(std::abs(f2.intercept - f1.intercept) < 1e-8);
  const Vector fitted1 = Vector::Constant(n, f1.intercept) + X * f1.beta;
  const Vector fitted2 = Vector::Constant(n, f2.intercept) + Xs * f2.beta;
  CHECK((fitted1 - fitted2).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("2S regression: affine equivariance of coefficients") {
  const Index n = 250, p = 3;
  const Matrix X = random_normal(n, p, 35);
  Rng rng(36);
  Vector y(n);
  for (Index i = 0; i < n; ++i) y[i] = 1.5 - X(i, 2) + 0.3 * normal_draw(rng);

  Matrix A(p, p);
  A << 1.2, 0.1, 0.0, -0.2, 0.9, 0.3, 0.1, 0.0, 1.1;
  Vector b(p);
  b << 1.0, -2.0, 0.5;
  const Matrix Xt = (X * A.transpose()).rowwise() + b.transpose();

  const RegressionFit f1 = fit_2s(X, y, ScatterConfig(), 0.05, 2);
  const RegressionFit f2 = fit_2s(Xt, y, ScatterConfig(), 0.05, 2);
  // beta transforms by A^{-T}, fitted values are invariant.
  const Vector fitted1 = Vector::Constant(n, f1.intercept) + X * f1.beta;
  const Vector fitted2 = Vector::Constant(n, f2.intercept) + Xt * f2.beta;
  CHECK((fitted1 - fitted2).cwiseAbs().maxCoeff() < 1e-5);
}
