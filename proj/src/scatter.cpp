#include "robust3s/scatter.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "robust3s/distributions.hpp"
#include "robust3s/rng.hpp"

namespace robust3s {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double simpson_expected_rho(int k, double c, int grid) {
  // E[rho_B(X/c)] for X ~ chi^2_k: Simpson on [0, c] plus the exact tail
  // mass. The substitution x = u^2 removes the density singularity at the
  // origin for k = 1, so the rule keeps its full order for every k.
  if (grid % 2 != 0) ++grid;
  const double r = std::sqrt(c);
  const double h = r / grid;
  double acc = 0.0;
  for (int i = 1; i <= grid; ++i) {  // integrand vanishes at u = 0
    const double u = i * h;
    const double w = (i == grid) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * rho_bisquare(u * u / c) * chi2_pdf(u * u, double(k)) * 2.0 * u;
  }
  return acc * h / 3.0 + gamma_q(0.5 * k, 0.5 * c);
}

}  // namespace

double consistency_constant(int k, double b, int grid) {
  if (k < 1) throw std::invalid_argument("consistency_constant: k must be >= 1");
  if (!(b > 0.0 && b < 1.0)) throw std::invalid_argument("consistency_constant: b outside (0,1)");

  double lo = double(k), hi = double(k);
  while (simpson_expected_rho(k, lo, grid) < b && lo > 1e-8) lo *= 0.5;
  while (simpson_expected_rho(k, hi, grid) > b && hi < 1e8) hi *= 2.0;
  for (int it = 0; it < 200 && (hi - lo) > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (simpson_expected_rho(k, mid, grid) > b)
      lo = mid;  // expected rho decreases in c
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

double consistency_constant_for(const ScatterConfig& cfg, int k) {
  auto it = cfg.consistency_constants.find(k);
  if (it != cfg.consistency_constants.end()) return it->second;

  static std::mutex mu;
  static std::map<std::pair<int, double>, double> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(k, cfg.breakdown);
  auto hit = cache.find(key);
  if (hit != cache.end()) return hit->second;
  const double c = consistency_constant(k, cfg.breakdown);
  cache.emplace(key, c);
  return c;
}

double gs_scale_solve(const Vector& d, const Vector& c, double b) {
  const Index n = d.size();
  if (n == 0 || c.size() != n) throw std::invalid_argument("gs_scale_solve: size mismatch");
  const double target = b * c.mean();

  auto g = [&](double s) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) acc += c[i] * rho_bisquare(d[i] / (c[i] * s));
    return acc / double(n) - target;
  };

  std::vector<double> r(static_cast<std::size_t>(n));
  double rmax = 0.0;
  for (Index i = 0; i < n; ++i) {
    r[static_cast<std::size_t>(i)] = d[i] / c[i];
    rmax = std::max(rmax, r[static_cast<std::size_t>(i)]);
  }
  if (!(rmax > 0.0)) throw numerical_error("gs_scale_solve: all distances are zero");
  std::nth_element(r.begin(), r.begin() + n / 2, r.end());
  double s0 = r[static_cast<std::size_t>(n / 2)];
  if (!(s0 > 0.0)) s0 = 1e-3 * rmax;

  double lo, hi;
  if (g(s0) > 0.0) {
    lo = s0;
    hi = s0;
    do {
      hi *= 4.0;
    } while (g(hi) > 0.0 && hi < s0 * 4e6);
    if (g(hi) > 0.0) throw numerical_error("gs_scale_solve: no root in bracket");
  } else {
    hi = s0;
    lo = s0;
    do {
      lo *= 0.25;
    } while (g(lo) <= 0.0 && lo > s0 * 0.25e-12);
    if (g(lo) <= 0.0) throw numerical_error("gs_scale_solve: degenerate distances");
  }
  while (hi - lo > 1e-13 * hi) {
    const double mid = 0.5 * (lo + hi);
    if (g(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

namespace {

Vector gather_vec(const Vector& v, const std::vector<Index>& idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Index>(i)] = v[idx[i]];
  return out;
}

Matrix gather_mat(const Matrix& S, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  Matrix out(static_cast<Index>(rows.size()), static_cast<Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Index>(i), static_cast<Index>(j)) = S(rows[i], cols[j]);
  return out;
}

std::string condition_message(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S, Eigen::EigenvaluesOnly);
  std::ostringstream ss;
  if (es.info() == Eigen::Success) {
    const double lmax = es.eigenvalues().maxCoeff();
    const double lmin = es.eigenvalues().minCoeff();
    ss << "condition estimate " << (lmin > 0.0 ? lmax / lmin : kInf);
  } else {
    ss << "condition estimate unavailable";
  }
  return ss.str();
}

}  // namespace

std::pair<double, Index> partial_mahalanobis(const Vector& z, const FlagVector& u,
                                             const Vector& m, const Matrix& S) {
  if (z.size() != u.size() || z.size() != m.size() || S.rows() != z.size() || S.cols() != z.size())
    throw std::invalid_argument("partial_mahalanobis: size mismatch");
  std::vector<Index> obs;
  for (Index j = 0; j < u.size(); ++j)
    if (u[j] != 0) obs.push_back(j);
  if (obs.empty()) throw std::invalid_argument("partial_mahalanobis: no observed coordinates");

  const Matrix Soo = gather_mat(S, obs, obs);
  Eigen::LLT<Matrix> llt(Soo);
  if (llt.info() != Eigen::Success)
    throw numerical_error("partial_mahalanobis: singular observed sub-block (" +
                          condition_message(Soo) + ")");
  const Vector x = gather_vec(z, obs) - gather_vec(m, obs);
  const Vector y = llt.matrixL().solve(x);
  return {y.squaredNorm(), static_cast<Index>(obs.size())};
}

namespace {

struct Candidate {
  Vector m;
  Matrix S;  // scale absorbed: generalized S-scale equals 1
  Vector d;  // squared distances under S
  double logdet = kInf;
};

// Distances and log-determinant under an SPD trial scatter.
bool dist_logdet(const Matrix& Z, const Vector& m, const Matrix& S, Vector& d, double& logdet) {
  Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) return false;
  logdet = 2.0 * Matrix(llt.matrixLLT()).diagonal().array().log().sum();
  if (!std::isfinite(logdet)) return false;
  Matrix Y = llt.matrixL().solve((Z.rowwise() - m.transpose()).transpose());
  d = Y.colwise().squaredNorm().transpose();
  return true;
}

// Absorb the S-scale into the candidate's scatter and score it by log det.
bool score_candidate(const Matrix& Z, const Vector& cvec, double b, Candidate& cand) {
  Vector d0;
  double ld0;
  if (!dist_logdet(Z, cand.m, cand.S, d0, ld0)) return false;
  double s;
  try {
    s = gs_scale_solve(d0, cvec, b);
  } catch (const numerical_error&) {
    return false;
  }
  if (!(s > 0.0) || !std::isfinite(s)) return false;
  cand.S *= s;
  cand.d = d0 / s;
  cand.logdet = ld0 + double(Z.cols()) * std::log(s);
  return true;
}

bool concentrate_once(const Matrix& Z, double cq, Candidate& cand) {
  const Index n = Z.rows(), q = Z.cols();
  Vector w(n);
  Index npos = 0;
  for (Index i = 0; i < n; ++i) {
    w[i] = drho_bisquare(cand.d[i] / cq);
    if (w[i] > 0.0) ++npos;
  }
  if (npos < q + 1) return false;
  const double sw = w.sum();
  if (!(sw > 0.0)) return false;
  const Vector mnew = Z.transpose() * w / sw;
  const Matrix Zc = Z.rowwise() - mnew.transpose();
  cand.m = mnew;
  cand.S = Zc.transpose() * w.asDiagonal() * Zc / sw;
  return true;
}

// Concentration iterations until the fixed point: the determinant never
// increases along concentration steps, and iteration stops once the
// location/scatter pair moves by less than the relative tolerance.
int refine_candidate(const Matrix& Z, const Vector& cvec, double cq, double b, Candidate& cand,
                     int max_steps, double tol, bool* converged) {
  *converged = false;
  int steps = 0;
  while (steps < max_steps) {
    Candidate trial = cand;
    if (!concentrate_once(Z, cq, trial) || !score_candidate(Z, cvec, b, trial)) {
      *converged = true;
      break;
    }
    ++steps;
    if (trial.logdet > cand.logdet + 1e-12 * (1.0 + std::abs(cand.logdet))) {
      *converged = true;  // rounding-level stall
      break;
    }
    const double dm = (trial.m - cand.m).cwiseAbs().maxCoeff() / (1.0 + cand.m.cwiseAbs().maxCoeff());
    const double dS = (trial.S - cand.S).cwiseAbs().maxCoeff() / (1.0 + cand.S.cwiseAbs().maxCoeff());
    cand = std::move(trial);
    if (std::max(dm, dS) < tol) {
      *converged = true;
      break;
    }
  }
  return steps;
}

LocationScatter finalize_complete(const Matrix& Z, const Vector& cvec, double cq, double b,
                                  const Candidate& cand, int iterations, bool converged) {
  LocationScatter out;
  out.m = cand.m;
  out.S = cand.S;
  Vector d;
  double ld;
  if (!dist_logdet(Z, out.m, out.S, d, ld))
    throw numerical_error("s_estimator: final scatter not positive definite");
  out.case_distances = d;
  out.gs_scale = gs_scale_solve(d, cvec, b);
  const Index n = Z.rows();
  out.case_weights.resize(n);
  for (Index i = 0; i < n; ++i)
    out.case_weights[i] =
        std::clamp(drho_bisquare(d[i] / (cq * out.gs_scale)) / 3.0, 0.0, 1.0);
  out.converged = converged;
  out.iterations = iterations;
  return out;
}

}  // namespace

LocationScatter s_estimator_complete(Eigen::Ref<const Matrix> Zin, const ScatterConfig& cfg,
                                     std::uint64_t seed, const LocationScatter* warm_start) {
  const Matrix Z = Zin;
  const Index n = Z.rows(), q = Z.cols();
  if (n <= 2 * q) throw data_error("s_estimator: need n > 2 (p + 1) cases");
  if (cfg.rho != RhoKind::tukey_bisquare)
    throw std::invalid_argument("s_estimator: scatter estimation uses the bisquare rho");

  const double b = cfg.breakdown;
  const double cq = consistency_constant_for(cfg, static_cast<int>(q));
  const Vector cvec = Vector::Constant(n, cq);

  if (warm_start != nullptr) {
    Candidate cand{warm_start->m, warm_start->S, Vector(), kInf};
    if (!score_candidate(Z, cvec, b, cand))
      throw numerical_error("s_estimator: warm start is not positive definite");
    bool conv = false;
    const int iters = refine_candidate(Z, cvec, cq, b, cand, cfg.max_iter, cfg.tol, &conv);
    return finalize_complete(Z, cvec, cq, b, cand, iters, conv);
  }

  // Starts are ranked by the minimum-volume-ellipsoid criterion: the volume
  // of the candidate shape blown up to cover the best half of the cases,
  // logdet(S) + q log d_(h). A covering criterion is essential here: both
  // the raw S objective and a covariance-determinant criterion are drawn to
  // coincident leverage clusters (zero spread in most directions), while a
  // covering ellipsoid must stretch out to reach them and so rejects them.
  Rng rng(seed);
  const Index h = (n + q + 1) / 2;
  std::vector<Candidate> kept;
  kept.reserve(static_cast<std::size_t>(cfg.subsamples));
  Vector d_all;
  std::vector<Index> order(static_cast<std::size_t>(n));
  auto coverage_radius = [&](const Vector& d) {
    for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::nth_element(order.begin(), order.begin() + (h - 1), order.end(),
                     [&](Index a, Index c) { return d[a] < d[c]; });
    return d[order[static_cast<std::size_t>(h - 1)]];
  };
  for (int t = 0; t < cfg.subsamples; ++t) {
    Candidate cand;
    bool ok = false;
    double ld = 0.0;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      const auto idx = sample_without_replacement(rng, n, q + 1);
      Matrix Zs(q + 1, q);
      for (Index i = 0; i <= q; ++i) Zs.row(i) = Z.row(idx[static_cast<std::size_t>(i)]);
      cand.m = Zs.colwise().mean();
      const Matrix Zc = Zs.rowwise() - cand.m.transpose();
      cand.S = Zc.transpose() * Zc / double(q);
      ok = dist_logdet(Z, cand.m, cand.S, d_all, ld);
    }
    if (!ok) continue;
    double dh = coverage_radius(d_all);
    if (!(dh > 0.0)) continue;
    cand.logdet = ld + double(q) * std::log(dh);  // covering volume score
    // Improvement-guarded concentration: refit on the covered half and keep
    // the step only if the covering volume shrinks.
    for (int step = 0; step < cfg.concentration_steps; ++step) {
      Matrix Zh(h, q);
      for (Index i = 0; i < h; ++i) Zh.row(i) = Z.row(order[static_cast<std::size_t>(i)]);
      const Vector mh = Zh.colwise().mean();
      const Matrix Zc = Zh.rowwise() - mh.transpose();
      const Matrix Sh = Zc.transpose() * Zc / double(h - 1);
      Vector d_trial;
      double ld_trial;
      if (!dist_logdet(Z, mh, Sh, d_trial, ld_trial)) break;
      const double dh_trial = coverage_radius(d_trial);
      if (!(dh_trial > 0.0)) break;
      const double vol = ld_trial + double(q) * std::log(dh_trial);
      if (vol >= cand.logdet) break;
      cand.m = mh;
      cand.S = Sh;
      cand.logdet = vol;
      d_all = d_trial;
      dh = dh_trial;
    }
    if (std::isfinite(cand.logdet)) kept.push_back(cand);
  }
  if (kept.empty()) throw numerical_error("degenerate design");

  std::stable_sort(kept.begin(), kept.end(),
                   [](const Candidate& a, const Candidate& c) { return a.logdet < c.logdet; });
  const std::size_t nbest = std::min<std::size_t>(kept.size(), std::size_t(cfg.best_candidates));

  std::size_t winner = kept.size();
  int winner_iters = 0;
  bool winner_conv = false;
  double best_logdet = kInf;
  for (std::size_t i = 0; i < nbest; ++i) {
    if (!score_candidate(Z, cvec, b, kept[i])) continue;
    bool conv = false;
    const int iters = refine_candidate(Z, cvec, cq, b, kept[i], cfg.max_iter, cfg.tol, &conv);
    if (kept[i].logdet < best_logdet) {
      best_logdet = kept[i].logdet;
      winner = i;
      winner_iters = iters;
      winner_conv = conv;
    }
  }
  if (winner == kept.size()) throw numerical_error("degenerate design");
  return finalize_complete(Z, cvec, cq, b, kept[winner], winner_iters, winner_conv);
}

namespace {

struct Pattern {
  std::vector<Index> rows;
  std::vector<Index> obs;
  std::vector<Index> mis;
};

std::vector<Pattern> build_patterns(const FlagMatrix& U) {
  std::map<std::string, std::size_t> seen;
  std::vector<Pattern> pats;
  const Index n = U.rows(), q = U.cols();
  std::string key(static_cast<std::size_t>(q), '0');
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < q; ++j) key[static_cast<std::size_t>(j)] = U(i, j) != 0 ? '1' : '0';
    auto it = seen.find(key);
    if (it == seen.end()) {
      Pattern p;
      for (Index j = 0; j < q; ++j) (U(i, j) != 0 ? p.obs : p.mis).push_back(j);
      seen.emplace(key, pats.size());
      pats.push_back(std::move(p));
      it = seen.find(key);
    }
    pats[it->second].rows.push_back(i);
  }
  return pats;
}

// One factorization pass: partial distances plus, for incomplete patterns,
// the best-linear-prediction coefficients and conditional covariance.
struct PatternWork {
  Matrix B;      // mis x obs
  Matrix Ccond;  // mis x mis
};

void pattern_pass(const Matrix& Z, const std::vector<Pattern>& pats, const Vector& m,
                  const Matrix& S, Vector& d, std::vector<PatternWork>* work) {
  d.resize(Z.rows());
  if (work != nullptr) work->assign(pats.size(), PatternWork{});
  for (std::size_t pi = 0; pi < pats.size(); ++pi) {
    const Pattern& pat = pats[pi];
    const Matrix Soo = gather_mat(S, pat.obs, pat.obs);
    Eigen::LLT<Matrix> llt(Soo);
    if (llt.info() != Eigen::Success)
      throw numerical_error("gse: singular observed sub-block (" + condition_message(Soo) + ")");
    const Vector mo = gather_vec(m, pat.obs);
    for (Index row : pat.rows) {
      Vector x(static_cast<Index>(pat.obs.size()));
      for (std::size_t j = 0; j < pat.obs.size(); ++j) x[static_cast<Index>(j)] = Z(row, pat.obs[j]);
      x -= mo;
      d[row] = llt.matrixL().solve(x).squaredNorm();
    }
    if (work != nullptr && !pat.mis.empty()) {
      const Matrix Som = gather_mat(S, pat.obs, pat.mis);
      const Matrix SooInvSom = llt.solve(Som);
      (*work)[pi].B = SooInvSom.transpose();
      (*work)[pi].Ccond = gather_mat(S, pat.mis, pat.mis) - (*work)[pi].B * Som;
    }
  }
}

std::pair<Vector, Matrix> pairwise_robust_init(const Matrix& Z, const FlagMatrix& U,
                                               const ScatterConfig& cfg) {
  const Index n = Z.rows(), q = Z.cols();
  const double b = cfg.breakdown;
  const double c1 = consistency_constant_for(cfg, 1);

  auto median_of = [](std::vector<double> v) {
    const std::size_t k = (v.size() - 1) / 2;
    std::nth_element(v.begin(), v.begin() + k, v.end());
    double lo = v[k];
    if (v.size() % 2 == 0) {
      std::nth_element(v.begin(), v.begin() + k + 1, v.end());
      return 0.5 * (lo + v[k + 1]);
    }
    return lo;
  };
  // Univariate bisquare M-scale^2 of centered values (k = 1 distances).
  auto mscale_sq = [&](const std::vector<double>& v) {
    const double med = median_of(v);
    Vector dsq(static_cast<Index>(v.size()));
    double dmax = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double dev = v[i] - med;
      dsq[static_cast<Index>(i)] = dev * dev;
      dmax = std::max(dmax, dsq[static_cast<Index>(i)]);
    }
    if (!(dmax > 0.0)) return 0.0;
    return gs_scale_solve(dsq, Vector::Constant(dsq.size(), c1), b);
  };

  Vector med(q), scl(q);
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(q));
  for (Index j = 0; j < q; ++j) {
    for (Index i = 0; i < n; ++i)
      if (U(i, j) != 0) cols[static_cast<std::size_t>(j)].push_back(Z(i, j));
    if (cols[static_cast<std::size_t>(j)].size() < 2)
      throw numerical_error("degenerate design");
    med[j] = median_of(cols[static_cast<std::size_t>(j)]);
    const double s2 = mscale_sq(cols[static_cast<std::size_t>(j)]);
    if (!(s2 > 0.0)) throw numerical_error("degenerate design");
    scl[j] = std::sqrt(s2);
  }

  Matrix R = Matrix::Identity(q, q);
  for (Index j = 0; j < q; ++j) {
    for (Index k = j + 1; k < q; ++k) {
      std::vector<double> u, v;
      for (Index i = 0; i < n; ++i) {
        if (U(i, j) == 0 || U(i, k) == 0) continue;
        const double a = (Z(i, j) - med[j]) / scl[j];
        const double c = (Z(i, k) - med[k]) / scl[k];
        u.push_back(a + c);
        v.push_back(a - c);
      }
      if (u.size() < 2) continue;
      const double su = mscale_sq(u), sv = mscale_sq(v);
      if (su + sv > 0.0)
        R(j, k) = R(k, j) = std::clamp((su - sv) / (su + sv), -0.999, 0.999);
    }
  }

  Matrix S = scl.asDiagonal() * R * scl.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success) throw numerical_error("degenerate design");
  const double lmax = es.eigenvalues().maxCoeff();
  if (!(lmax > 0.0)) throw numerical_error("degenerate design");
  Vector lam = es.eigenvalues().cwiseMax(1e-6 * lmax);
  S = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
  S = 0.5 * (S + S.transpose()).eval();
  return {med, S};
}

}  // namespace

LocationScatter gse(Eigen::Ref<const Matrix> Zin, const FlagMatrix& U, const ScatterConfig& cfg,
                    std::uint64_t seed, const LocationScatter* warm_start) {
  const Matrix Z = Zin;
  const Index n = Z.rows(), q = Z.cols();
  if (U.rows() != n || U.cols() != q) throw std::invalid_argument("gse: flag matrix shape mismatch");
  if ((U == 1).all()) return s_estimator_complete(Z, cfg, seed, warm_start);
  if (cfg.rho != RhoKind::tukey_bisquare)
    throw std::invalid_argument("gse: scatter estimation uses the bisquare rho");

  for (Index i = 0; i < n; ++i)
    if ((U.row(i) == 0).all()) throw data_error("gse: a case has no observed coordinates");
  for (Index j = 0; j < q; ++j)
    if (U.col(j).sum() < 2) throw numerical_error("degenerate design");

  const double b = cfg.breakdown;
  Vector crow(n);
  {
    std::map<Index, double> by_k;
    for (Index i = 0; i < n; ++i) {
      const Index k = U.row(i).sum();
      auto it = by_k.find(k);
      if (it == by_k.end())
        it = by_k.emplace(k, consistency_constant_for(cfg, static_cast<int>(k))).first;
      crow[i] = it->second;
    }
  }

  Vector m;
  Matrix S;
  if (warm_start != nullptr) {
    m = warm_start->m;
    S = warm_start->S;
  } else {
    std::vector<Index> complete;
    for (Index i = 0; i < n; ++i)
      if ((U.row(i) == 1).all()) complete.push_back(i);
    const Index need = std::max<Index>(2 * q + 1, (n + 1) / 2);
    if (static_cast<Index>(complete.size()) >= need) {
      Matrix Zc(static_cast<Index>(complete.size()), q);
      for (std::size_t i = 0; i < complete.size(); ++i) Zc.row(static_cast<Index>(i)) = Z.row(complete[i]);
      const LocationScatter init = s_estimator_complete(Zc, cfg, seed);
      m = init.m;
      S = init.S;
    } else {
      std::tie(m, S) = pairwise_robust_init(Z, U, cfg);
    }
  }

  const auto pats = build_patterns(U);
  Vector d;
  std::vector<PatternWork> work;
  double s = 1.0;
  bool converged = false;
  int iter = 0;
  for (; iter < cfg.max_iter; ++iter) {
    pattern_pass(Z, pats, m, S, d, &work);
    s = gs_scale_solve(d, crow, b);

    Vector w(n);
    for (Index i = 0; i < n; ++i) w[i] = drho_bisquare(d[i] / (crow[i] * s));
    const double sw = w.sum();
    if (!(sw > 0.0)) throw numerical_error("gse: all cases received zero weight");

    // Conditional expectations of the full vectors.
    Matrix Zhat = Z;
    for (std::size_t pi = 0; pi < pats.size(); ++pi) {
      const Pattern& pat = pats[pi];
      if (pat.mis.empty()) continue;
      const Vector mo = gather_vec(m, pat.obs);
      const Vector mm = gather_vec(m, pat.mis);
      for (Index row : pat.rows) {
        Vector x(static_cast<Index>(pat.obs.size()));
        for (std::size_t j = 0; j < pat.obs.size(); ++j) x[static_cast<Index>(j)] = Z(row, pat.obs[j]);
        const Vector fill = mm + work[pi].B * (x - mo);
        for (std::size_t j = 0; j < pat.mis.size(); ++j) Zhat(row, pat.mis[j]) = fill[static_cast<Index>(j)];
      }
    }

    const Vector m_new = Zhat.transpose() * w / sw;
    const Matrix Zc = Zhat.rowwise() - m_new.transpose();
    Matrix S_new = Zc.transpose() * w.asDiagonal() * Zc / sw;
    for (std::size_t pi = 0; pi < pats.size(); ++pi) {
      const Pattern& pat = pats[pi];
      if (pat.mis.empty()) continue;
      double wp = 0.0;
      for (Index row : pat.rows) wp += w[row];
      if (wp <= 0.0) continue;
      const double f = wp / sw;
      for (std::size_t a = 0; a < pat.mis.size(); ++a)
        for (std::size_t bb = 0; bb < pat.mis.size(); ++bb)
          S_new(pat.mis[a], pat.mis[bb]) += f * work[pi].Ccond(static_cast<Index>(a), static_cast<Index>(bb));
    }
    S_new = 0.5 * (S_new + S_new.transpose()).eval();

    const double dm = (m_new - m).cwiseAbs().maxCoeff() / (1.0 + m.cwiseAbs().maxCoeff());
    const double dS = (S_new - S).cwiseAbs().maxCoeff() / (1.0 + S.cwiseAbs().maxCoeff());
    m = m_new;
    S = S_new;
    if (std::max(dm, dS) < cfg.tol) {
      converged = true;
      ++iter;
      break;
    }
  }

  // Absorb the generalized S-scale so the constraint holds at scale 1.
  pattern_pass(Z, pats, m, S, d, nullptr);
  s = gs_scale_solve(d, crow, b);
  S *= s;
  d /= s;

  LocationScatter out;
  out.m = std::move(m);
  out.S = std::move(S);
  out.case_distances = d;
  out.gs_scale = gs_scale_solve(d, crow, b);
  out.case_weights.resize(n);
  for (Index i = 0; i < n; ++i)
    out.case_weights[i] =
        std::clamp(drho_bisquare(d[i] / (crow[i] * out.gs_scale)) / 3.0, 0.0, 1.0);
  out.converged = converged;
  out.iterations = iter;
  return out;
}

}  // namespace robust3s
