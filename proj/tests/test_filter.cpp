#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "robust3s/filter.hpp"
#include "robust3s/rng.hpp"

using namespace robust3s;

namespace {

constexpr double kLog2 = 0.6931471805599453094;
constexpr double kT0 = 1.0 / kLog2;

double f0(double t) { return 1.0 - std::exp(-kLog2 * t); }
double f0_inv(double u) { return -std::log1p(-u) / kLog2; }

// Independent oracle for the flag proportion: brute-force counting over a
// dense grid augmented with points just below every ECDF jump.
double grid_oracle_d(const Vector& tail_sorted, double just_below = 1e-9) {
  const Index m = tail_sorted.size();
  if (m == 0) return 0.0;
  std::vector<double> grid;
  const double tmax = tail_sorted[m - 1] + 1.0;
  const int npts = 10000;
  for (int i = 0; i <= npts; ++i) grid.push_back(kT0 + (tmax - kT0) * i / npts);
  for (Index i = 0; i < m; ++i)
    if (tail_sorted[i] - just_below >= kT0) grid.push_back(tail_sorted[i] - just_below);
  double best = 0.0;
  for (double t : grid) {
    Index count = 0;
    for (Index i = 0; i < m; ++i)
      if (tail_sorted[i] <= t) ++count;
    best = std::max(best, f0(t) - double(count) / double(m));
  }
  return best;
}

Vector from(std::initializer_list<double> v) {
  Vector x(static_cast<Index>(v.size()));
  Index i = 0;
  for (double a : v) x[i++] = a;
  return x;
}

}  // namespace

TEST_CASE("empirical quantile: order statistic without interpolation") {
  CHECK(empirical_quantile(from({3, 1, 2}), 0.5) == 2.0);
  Vector ten(10);
  for (Index i = 0; i < 10; ++i) ten[i] = double(i + 1);
  CHECK(empirical_quantile(ten, 0.8) == 8.0);
  CHECK(empirical_quantile(from({5}), 0.2) == 5.0);
  CHECK_THROWS_AS(empirical_quantile(Vector(0), 0.5), data_error);
  CHECK_THROWS_AS(empirical_quantile(ten, 0.0), std::invalid_argument);
}

TEST_CASE("tail estimates on 1..10 at alpha = 0.2") {
  Vector ten(10);
  for (Index i = 0; i < 10; ++i) ten[i] = double(i + 1);
  const TailEstimates est = tail_estimates(ten, 0.2);
  CHECK(est.eta_upper == 8.0);
  CHECK(est.s_upper == 1.0);
  CHECK(est.eta_lower == 2.0);
  CHECK(est.s_lower == 1.0);
}

TEST_CASE("median-of-exceedances equals the quantile difference form") {
  // The tail scale must coincide with G_n^{-1}(1 - alpha/2) - eta exactly;
  // the implementation asserts this internally, so it is exercised here on
  // many random continuous samples of varying size.
  Rng rng(991);
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 7 + static_cast<Index>(uniform_below(rng, 400));
    Vector x(n);
    for (Index i = 0; i < n; ++i) x[i] = std::exp(2.0 * normal_draw(rng));
    const double alpha = 0.05 + 0.4 * uniform01(rng);
    const TailEstimates est = tail_estimates(x, alpha);
    CHECK(est.eta_lower <= est.eta_upper);
    if (!est.upper_degenerate) {
      const double sq = empirical_quantile(x, 1.0 - alpha / 2.0) - est.eta_upper;
      CHECK(est.s_upper == sq);
      CHECK(est.s_upper > 0.0);
    }
    if (!est.lower_degenerate) {
      const double sq = est.eta_lower - empirical_quantile(x, alpha / 2.0);
      CHECK(est.s_lower == sq);
      CHECK(est.s_lower > 0.0);
    }
  }
}

TEST_CASE("exponential tail scale converges to log 2") {
  Rng rng(7);
  const Index n = 1000000;
  Vector x(n);
  for (Index i = 0; i < n; ++i) x[i] = -std::log(uniform_open(rng));
  const TailEstimates est = tail_estimates(x, 0.2);
  CHECK(est.s_upper == doctest::Approx(kLog2).epsilon(0.015));
}

TEST_CASE("flag proportion: reference-quantile tails give a vanishing d") {
  const Index m = 1000;
  Vector tail(m);
  for (Index i = 0; i < m; ++i) tail[i] = f0_inv((double(i) + 0.5) / double(m));
  const TailFlagResult r = flag_proportion(tail);
  CHECK(r.d_hat <= 2.0 / double(m));
  CHECK(std::abs(r.d_hat - grid_oracle_d(tail, 1e-12)) <= 1e-12);
}

TEST_CASE("flag proportion: a single gross point is flagged") {
  // Nine points slightly ahead of the reference quantiles (their ECDF gaps
  // stay below 0.1), plus one point far out in the tail.
  Vector tail(10);
  for (Index i = 0; i < 9; ++i) tail[i] = f0_inv(0.09 * (double(i) + 1.0));
  tail[9] = 50.0;
  std::sort(tail.data(), tail.data() + 10);
  const TailFlagResult r = flag_proportion(tail);
  CHECK(r.d_hat == doctest::Approx(f0(50.0) - 0.9).epsilon(1e-6));
  CHECK(std::abs(r.d_hat - grid_oracle_d(tail, 1e-12)) <= 1e-12);
  Index beyond = 0;
  for (Index i = 0; i < 10; ++i)
    if (tail[i] > r.t_hat) ++beyond;
  CHECK(beyond == 1);
}

TEST_CASE("flag proportion: exactly tied outliers are flagged as a block") {
  // Twenty tail points: fifteen reference-like values and five copies of
  // one gross value; the whole tied group must cross the cutoff together.
  Vector tail(20);
  for (Index i = 0; i < 15; ++i) tail[i] = f0_inv(0.06 * (double(i) + 1.0));
  for (Index i = 15; i < 20; ++i) tail[i] = 18.0;
  std::sort(tail.data(), tail.data() + 20);
  const TailFlagResult r = flag_proportion(tail);
  Index beyond = 0;
  for (Index i = 0; i < 20; ++i)
    if (tail[i] > r.t_hat) ++beyond;
  CHECK(beyond == 5);
}

TEST_CASE("flag proportion: everything at or below t0 is kept") {
  Vector tail(5);
  for (Index i = 0; i < 5; ++i) tail[i] = kT0 * (double(i) + 1.0) / 5.0;
  const TailFlagResult r = flag_proportion(tail);
  CHECK(r.d_hat == 0.0);
  Index beyond = 0;
  for (Index i = 0; i < 5; ++i)
    if (tail[i] > r.t_hat) ++beyond;
  CHECK(beyond == 0);
}

TEST_CASE("flag proportion: empty tail") {
  const TailFlagResult r = flag_proportion(Vector(0));
  CHECK(r.d_hat == 0.0);
  CHECK(std::isinf(r.cutoff));
}

TEST_CASE("grid oracle equivalence over random samples") {
  Rng rng(42);
  for (int rep = 0; rep < 100; ++rep) {
    const Index m = 5 + static_cast<Index>(uniform_below(rng, 300));
    Vector tail(m);
    const int shape = rep % 3;
    for (Index i = 0; i < m; ++i) {
      const double u = uniform_open(rng);
      if (shape == 0)
        tail[i] = -std::log1p(-u);  // exponential
      else if (shape == 1)
        tail[i] = std::abs(normal_draw(rng));  // light
      else
        tail[i] = std::exp(normal_draw(rng));  // heavy
    }
    std::sort(tail.data(), tail.data() + m);
    const TailFlagResult r = flag_proportion(tail);
    CHECK(std::abs(r.d_hat - grid_oracle_d(tail)) <= 1e-6);
    if (r.d_hat > 0.0) CHECK(r.t_hat >= kT0);
    Index beyond = 0;
    for (Index i = 0; i < m; ++i)
      if (tail[i] > r.t_hat) ++beyond;
    CHECK(double(beyond) <= std::ceil(r.d_hat * double(m)));
  }
}

TEST_CASE("filter variable: gross cell flagged, bulk kept") {
  Vector x(100);
  for (Index i = 0; i < 100; ++i) x[i] = double(i + 1);
  x[57] = 1e6;
  const VariableFilter vf = filter_variable(x, 0.2);
  CHECK(vf.flags[57] == 0);
  CHECK(vf.flags.sum() >= 98);
}

TEST_CASE("filter variable: constant sample exempt") {
  const VariableFilter vf = filter_variable(from({5, 5, 5, 5, 5}), 0.2);
  CHECK(vf.exempt);
  CHECK((vf.flags == 1).all());
  CHECK(vf.estimates.s_upper == 0.0);
}

TEST_CASE("filter variable: clean normal sample keeps nearly everything") {
  Rng rng(3);
  const Index n = 100000;
  Vector x(n);
  for (Index i = 0; i < n; ++i) x[i] = normal_draw(rng);
  const VariableFilter vf = filter_variable(x, 0.2);
  const double flagged = double(n - vf.flags.sum()) / double(n);
  CHECK(flagged < 0.005);
}

TEST_CASE("filter variable: location-scale equivariance of flags") {
  Rng rng(17);
  for (int rep = 0; rep < 25; ++rep) {
    const Index n = 40 + static_cast<Index>(uniform_below(rng, 200));
    Vector x(n);
    for (Index i = 0; i < n; ++i) x[i] = std::exp(normal_draw(rng)) - 0.8 * normal_draw(rng);
    const double a = 0.1 + 5.0 * uniform01(rng);
    const double b = 20.0 * (uniform01(rng) - 0.5);
    const VariableFilter v1 = filter_variable(x, 0.2);
    const VariableFilter v2 = filter_variable((a * x.array() + b).matrix(), 0.2);
    CHECK((v1.flags == v2.flags).all());
  }
}

TEST_CASE("filter variable: monotone extremity") {
  Rng rng(29);
  for (int rep = 0; rep < 25; ++rep) {
    const Index n = 60 + static_cast<Index>(uniform_below(rng, 200));
    Vector x(n);
    for (Index i = 0; i < n; ++i) x[i] = std::exp(1.5 * normal_draw(rng));
    const VariableFilter vf = filter_variable(x, 0.2);
    double max_kept = -1e300, min_kept = 1e300;
    for (Index i = 0; i < n; ++i) {
      if (vf.flags[i] == 1) {
        max_kept = std::max(max_kept, x[i]);
        min_kept = std::min(min_kept, x[i]);
      }
    }
    for (Index i = 0; i < n; ++i)
      if (vf.flags[i] == 0) CHECK((x[i] > max_kept || x[i] < min_kept));
  }
}

TEST_CASE("filter matrix: global switch arithmetic") {
  Rng rng(5);
  const Index n = 200, p = 4;
  Matrix X(n, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) X(i, j) = normal_draw(rng);

  // One grossly contaminated row: affected fraction 1/200 <= xi = 0.01.
  Matrix X1 = X;
  X1(11, 2) = 1e6;
  const FilterReport r1 = filter_matrix(X1, 0.2, 0.01);
  CHECK(r1.flags(11, 2) == 0);
  if (n - r1.n_complete <= 2) {  // switch decision per the displayed rule
    CHECK(r1.switch_off);
    CHECK((r1.effective_flags == 1).all());
  }

  // Five contaminated rows: 5/200 = 0.025 > 0.01, switch stays on.
  Matrix X5 = X;
  for (Index i = 0; i < 5; ++i) X5(20 + i, 1) = 1e6;
  const FilterReport r5 = filter_matrix(X5, 0.2, 0.01);
  CHECK(double(n - r5.n_complete) / double(n) > 0.01);
  CHECK_FALSE(r5.switch_off);
  CHECK((r5.effective_flags == r5.flags).all());
  for (Index i = 0; i < 5; ++i) CHECK(r5.effective_flags(20 + i, 1) == 0);
}

TEST_CASE("filter matrix: clean data at n = 10^4 turns the switch off") {
  Rng rng(13);
  const Index n = 10000, p = 15;
  Matrix X(n, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < n; ++i) X(i, j) = normal_draw(rng);
  const FilterReport rep = filter_matrix(X, 0.2, 0.01);
  CHECK(rep.switch_off);
}

TEST_CASE("filter matrix: non-finite input names the cell") {
  Matrix X = Matrix::Zero(30, 2);
  Rng rng(1);
  for (Index j = 0; j < 2; ++j)
    for (Index i = 0; i < 30; ++i) X(i, j) = normal_draw(rng);
  X(4, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(filter_matrix(X, 0.2, 0.01), doctest::Contains("row 5"), data_error);
}
