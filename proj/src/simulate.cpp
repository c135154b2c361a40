#include "robust3s/simulate.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <ostream>
#include <thread>

#include "robust3s/distributions.hpp"
#include "robust3s/dummy.hpp"
#include "robust3s/regress.hpp"
#include "robust3s/rng.hpp"

namespace robust3s {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Matrix haar_orthogonal(int p, Rng& rng) {
  Matrix G(p, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < p; ++i) G(i, j) = normal_draw(rng);
  Eigen::HouseholderQR<Matrix> qr(G);
  Matrix Q = qr.householderQ();
  const Matrix R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < p; ++j)
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  return Q;
}

}  // namespace

Matrix random_correlation(int p, double condition_number, std::uint64_t seed) {
  if (p < 1) throw std::invalid_argument("random_correlation: p must be positive");
  if (p == 1) return Matrix::Identity(1, 1);
  if (!(condition_number > 1.0))
    throw std::invalid_argument("random_correlation: condition number must exceed 1");

  Rng rng(seed);
  const Matrix Q = haar_orthogonal(p, rng);

  // Linearly spaced eigenvalues under a random orthogonal basis; the spread
  // is then rescaled to unit diagonal. Relative to geometric spacing this
  // keeps most of the spectrum low, which is what makes the smallest
  // eigendirection a genuinely damaging leverage direction.
  auto build = [&](double spread) {
    Vector lam(p);
    for (Index i = 0; i < p; ++i)
      lam[i] = 1.0 + spread * double(i) / double(p - 1);
    Matrix S = Q * lam.asDiagonal() * Q.transpose();
    const Vector dinv = S.diagonal().cwiseSqrt().cwiseInverse();
    Matrix R = dinv.asDiagonal() * S * dinv.asDiagonal();
    R = 0.5 * (R + R.transpose()).eval();
    R.diagonal().setOnes();
    return R;
  };
  auto cond_of = [](const Matrix& R) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(R, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    if (!(lmin > 0.0)) return std::numeric_limits<double>::infinity();
    return es.eigenvalues().maxCoeff() / lmin;
  };

  // The unit-diagonal rescale perturbs the spectrum, so the eigenvalue
  // spread is bisected until the rescaled matrix hits the target.
  double lo = 0.0;
  double hi = condition_number;
  while (cond_of(build(hi)) < condition_number && hi < 1e8) hi *= 2.0;
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (cond_of(build(mid)) < condition_number)
      lo = mid;
    else
      hi = mid;
  }
  return build(0.5 * (lo + hi));
}

Vector random_beta(int p, double radius, std::uint64_t seed) {
  if (p < 1) throw std::invalid_argument("random_beta: p must be positive");
  Rng rng(seed);
  Vector g(p);
  double norm = 0.0;
  do {
    for (Index i = 0; i < p; ++i) g[i] = normal_draw(rng);
    norm = g.norm();
  } while (!(norm > 0.0));
  return radius / norm * g;
}

Matrix dichotomize(Eigen::Ref<const Matrix> latent, const std::vector<double>& pis) {
  if (static_cast<Index>(pis.size()) != latent.cols())
    throw std::invalid_argument("dichotomize: one threshold per column required");
  Matrix D(latent.rows(), latent.cols());
  for (Index j = 0; j < latent.cols(); ++j) {
    const double thr = norm_quantile(pis[static_cast<std::size_t>(j)]);
    for (Index i = 0; i < latent.rows(); ++i) D(i, j) = latent(i, j) <= thr ? 1.0 : 0.0;
  }
  return D;
}

namespace {

// Marginal transforms for the non-normal covariate model, in blocks of
// three: N(0,1), chi^2(20), F(90,10), chi^2(1), Pareto(1,3), cycling.
struct Marginal {
  int kind = 0;  // 0 normal, 1 chi2(20), 2 F(90,10), 3 chi2(1), 4 pareto(1,3)

  double quantile(double u) const {
    switch (kind) {
      case 0: return norm_quantile(u);
      case 1: return chi2_quantile(u, 20.0);
      case 2: return f_quantile(u, 90.0, 10.0);
      case 3: return chi2_quantile(u, 1.0);
      default: return pareto_quantile(u, 1.0, 3.0);
    }
  }
  double mean() const {
    switch (kind) {
      case 0: return 0.0;
      case 1: return 20.0;
      case 2: return 10.0 / 8.0;
      case 3: return 1.0;
      default: return 1.5;
    }
  }
  double sd() const {
    switch (kind) {
      case 0: return 1.0;
      case 1: return std::sqrt(40.0);
      case 2: {
        const double d1 = 90.0, d2 = 10.0;
        return std::sqrt(2.0 * d2 * d2 * (d1 + d2 - 2.0) / (d1 * (d2 - 2.0) * (d2 - 2.0) * (d2 - 4.0)));
      }
      case 3: return std::sqrt(2.0);
      default: return std::sqrt(0.75);
    }
  }
};

Marginal marginal_for(const ScenarioConfig& cfg, Index j) {
  if (cfg.covariate_model == CovariateModel::normal) return Marginal{0};
  return Marginal{int((j / 3) % 5)};
}

std::vector<double> resolved_thresholds(const ScenarioConfig& cfg) {
  static const double defaults[3] = {0.25, 1.0 / 3.0, 0.5};
  std::vector<double> pis(static_cast<std::size_t>(cfg.p_d));
  for (int j = 0; j < cfg.p_d; ++j)
    pis[static_cast<std::size_t>(j)] = j < static_cast<int>(cfg.dummy_thresholds.size())
                                           ? cfg.dummy_thresholds[static_cast<std::size_t>(j)]
                                           : defaults[j % 3];
  return pis;
}

}  // namespace

ReplicateData gen_clean(const ScenarioConfig& cfg, std::uint64_t design_seed,
                        std::uint64_t noise_seed) {
  const int p = cfg.p_x + cfg.p_d;
  if (cfg.p_x < 1) throw std::invalid_argument("gen_clean: p_x must be positive");
  if (cfg.covariate_model == CovariateModel::nonnormal && cfg.p_d > 0)
    throw std::invalid_argument("gen_clean: non-normal covariates support continuous designs only");

  ReplicateData data;
  data.Sigma = random_correlation(p, cfg.condition_number, seed_mix(design_seed, 1));
  const Vector beta_full = random_beta(p, cfg.beta_radius, seed_mix(design_seed, 2));
  data.beta_x = beta_full.head(cfg.p_x);
  data.beta_d = beta_full.tail(cfg.p_d);
  data.alpha = 0.0;

  Eigen::LLT<Matrix> llt(data.Sigma);
  if (llt.info() != Eigen::Success) throw numerical_error("gen_clean: correlation not PD");
  const Matrix L = llt.matrixL();

  Rng rng(noise_seed);
  Matrix Z(cfg.n, p);
  for (Index i = 0; i < cfg.n; ++i)
    for (Index j = 0; j < p; ++j) Z(i, j) = normal_draw(rng);
  Z = Z * L.transpose();

  data.X = Z.leftCols(cfg.p_x);
  data.stats.mean_x.resize(cfg.p_x);
  data.stats.sd_x.resize(cfg.p_x);
  for (Index j = 0; j < cfg.p_x; ++j) {
    const Marginal g = marginal_for(cfg, j);
    if (g.kind != 0)
      for (Index i = 0; i < cfg.n; ++i) data.X(i, j) = g.quantile(norm_cdf(data.X(i, j)));
    data.stats.mean_x[j] = g.mean();
    data.stats.sd_x[j] = g.sd();
  }

  std::vector<double> pis = resolved_thresholds(cfg);
  data.D = cfg.p_d > 0 ? dichotomize(Z.rightCols(cfg.p_d), pis) : Matrix(cfg.n, 0);

  data.stats.sd_eps = cfg.sigma_eps;
  data.stats.mean_y = data.alpha + data.stats.mean_x.dot(data.beta_x);
  for (int j = 0; j < cfg.p_d; ++j)
    data.stats.mean_y += pis[static_cast<std::size_t>(j)] * data.beta_d[j];

  data.y.resize(cfg.n);
  for (Index i = 0; i < cfg.n; ++i) {
    double mu = data.alpha + data.X.row(i).dot(data.beta_x);
    if (cfg.p_d > 0) mu += data.D.row(i).dot(data.beta_d);
    data.y[i] = mu + cfg.sigma_eps * normal_draw(rng);
  }
  return data;
}

void contaminate_cellwise(ReplicateData& data, const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.epsilon <= 0.0) return;
  Rng rng(seed);
  const Index n = data.X.rows(), p = data.X.cols();

  const Index ncells = static_cast<Index>(std::floor(cfg.epsilon * double(n * p)));
  const auto cells = sample_without_replacement(rng, n * p, ncells);
  for (Index c : cells) {
    const Index i = c % n, j = c / n;
    const Marginal g = marginal_for(cfg, j);
    data.X(i, j) = cfg.covariate_model == CovariateModel::normal
                       ? data.stats.mean_x[j] + cfg.k * data.stats.sd_x[j]
                       : cfg.k * g.quantile(0.999);
  }

  const Index nresp = static_cast<Index>(std::floor(cfg.epsilon * double(n)));
  const auto rows = sample_without_replacement(rng, n, nresp);
  for (Index i : rows) data.y[i] = data.stats.mean_y + cfg.k * data.stats.sd_eps;
}

void contaminate_casewise(ReplicateData& data, const ScenarioConfig& cfg, std::uint64_t seed) {
  if (cfg.epsilon <= 0.0) return;
  Rng rng(seed);
  const Index n = data.X.rows(), px = data.X.cols();

  const Matrix Sigma_x = data.Sigma.topLeftCorner(px, px);
  Eigen::SelfAdjointEigenSolver<Matrix> es(Sigma_x);
  if (es.info() != Eigen::Success) throw numerical_error("contaminate_casewise: eigensolver failed");
  Vector v = es.eigenvectors().col(0);  // smallest eigenvalue first
  for (Index j = 0; j < px; ++j) {
    if (v[j] != 0.0) {
      if (v[j] < 0.0) v = -v;
      break;
    }
  }
  v *= std::sqrt(es.eigenvalues()[0]);  // now v' Sigma_x^{-1} v = 1

  const Index m = static_cast<Index>(std::floor(cfg.epsilon * double(n)));
  const auto rows = sample_without_replacement(rng, n, m);
  const Vector xc = cfg.casewise_size * v;
  for (Index i : rows) {
    data.X.row(i) = xc.transpose();
    double mu = data.alpha + xc.dot(data.beta_x);
    if (data.D.cols() > 0) mu += data.D.row(i).dot(data.beta_d);
    data.y[i] = mu + (cfg.k + cfg.sigma_eps * normal_draw(rng));
  }
}

ReplicateData make_replicate(const ScenarioConfig& cfg, int rep) {
  const std::uint64_t design_idx = cfg.fixed_design ? 0 : std::uint64_t(rep) + 1;
  ReplicateData data = gen_clean(cfg, derive_seed(cfg.seed, SeedStream::correlation, design_idx),
                                 derive_seed(cfg.seed, SeedStream::data, std::uint64_t(rep)));
  switch (cfg.scenario) {
    case Scenario::clean:
      break;
    case Scenario::cellwise:
      contaminate_cellwise(data, cfg, derive_seed(cfg.seed, SeedStream::cellwise, std::uint64_t(rep)));
      break;
    case Scenario::casewise:
      contaminate_casewise(data, cfg, derive_seed(cfg.seed, SeedStream::casewise, std::uint64_t(rep)));
      break;
  }
  return data;
}

namespace {

Vector slope_ases(const RegressionFit& fit) {
  Vector ase(fit.beta.size());
  for (Index j = 0; j < fit.beta.size(); ++j) ase[j] = fit.std_error(j + 1);
  return ase;
}

}  // namespace

EstimatorSpec make_estimator(const std::string& name) {
  EstimatorSpec spec;
  spec.name = name;
  if (name == "ls") {
    spec.fit = [](const ReplicateData& d, const ScenarioConfig& cfg, std::uint64_t) {
      Matrix XD(d.X.rows(), d.X.cols() + d.D.cols());
      XD.leftCols(d.X.cols()) = d.X;
      if (d.D.cols() > 0) XD.rightCols(d.D.cols()) = d.D;
      const RegressionFit fit = fit_ls(XD, d.y, cfg.tau);
      return FitOutcome{fit.beta, slope_ases(fit)};
    };
  } else if (name == "2s") {
    spec.fit = [](const ReplicateData& d, const ScenarioConfig& cfg, std::uint64_t seed) {
      if (d.D.cols() > 0) throw data_error("2s estimator supports continuous designs only");
      const RegressionFit fit = fit_2s(d.X, d.y, cfg.scatter, cfg.tau, seed);
      return FitOutcome{fit.beta, slope_ases(fit)};
    };
  } else if (name == "3s") {
    spec.fit = [](const ReplicateData& d, const ScenarioConfig& cfg, std::uint64_t seed) {
      if (d.D.cols() > 0) throw data_error("3s estimator supports continuous designs only");
      const RegressionFit fit =
          fit_3s(d.X, d.y, cfg.alpha_filter, cfg.xi, cfg.scatter, cfg.tau, seed);
      return FitOutcome{fit.beta, slope_ases(fit)};
    };
  } else if (name == "alternating") {
    spec.fit = [](const ReplicateData& d, const ScenarioConfig& cfg, std::uint64_t seed) {
      AlternatingOptions opts;
      opts.alpha_filter = cfg.alpha_filter;
      opts.xi = cfg.xi;
      opts.tau = cfg.tau;
      opts.scatter = cfg.scatter;
      opts.seed = seed;
      const MixedFit fit = alternating_fit(d.X, d.D, d.y, opts);
      Vector beta(fit.beta_x.size() + fit.beta_d.size());
      beta << fit.beta_x, fit.beta_d;
      Vector ase;
      if (fit.beta_d.size() == 0) ase = slope_ases(fit.inner_fit);
      return FitOutcome{beta, ase};
    };
  } else {
    throw std::invalid_argument("unknown estimator: " + name);
  }
  return spec;
}

namespace {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ROBUST3S_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioConfig& cfg, const std::vector<EstimatorSpec>& estimators) {
  if (!(cfg.epsilon >= 0.0 && cfg.epsilon < 0.5))
    throw std::invalid_argument("run_scenario: epsilon must lie in [0, 0.5)");
  if (cfg.k < 0.0) throw std::invalid_argument("run_scenario: k must be nonnegative");
  if (cfg.replicates < 1) throw std::invalid_argument("run_scenario: need at least one replicate");
  const int N = cfg.replicates;
  const std::size_t E = estimators.size();
  std::vector<std::vector<ReplicateMetrics>> slots(E, std::vector<ReplicateMetrics>(std::size_t(N)));

  const double zq = norm_quantile(1.0 - cfg.tau / 2.0);
  auto run_one = [&](int m) {
    ReplicateData data = make_replicate(cfg, m);
    const Vector truth = data.true_slopes();
    const std::uint64_t fit_seed = derive_seed(cfg.seed, SeedStream::fit, std::uint64_t(m));
    for (std::size_t e = 0; e < E; ++e) {
      ReplicateMetrics& out = slots[e][std::size_t(m)];
      try {
        const FitOutcome fit = estimators[e].fit(data, cfg, fit_seed);
        if (fit.beta.size() != truth.size())
          throw numerical_error("estimator returned wrong coefficient count");
        const Index p = truth.size();
        out.mse = (fit.beta - truth).squaredNorm() / double(p);
        if (fit.ase.size() == p) {
          out.has_ci = true;
          double cover = 0.0, len = 0.0;
          for (Index j = 0; j < p; ++j) {
            const double half = zq * fit.ase[j];
            cover += std::abs(fit.beta[j] - truth[j]) <= half ? 1.0 : 0.0;
            len += 2.0 * half;
          }
          out.cr = cover / double(p);
          out.cil = len / double(p);
        } else {
          out.cr = kNaN;
          out.cil = kNaN;
        }
        out.ok = true;
      } catch (const std::exception& ex) {
        out.ok = false;
        out.error = ex.what();
      }
    }
  };

  const int nthreads = std::min(resolve_threads(cfg.threads), N);
  if (nthreads <= 1) {
    for (int m = 0; m < N; ++m) run_one(m);
  } else {
    std::atomic<int> next{0};
    auto worker = [&]() {
      for (;;) {
        const int m = next.fetch_add(1);
        if (m >= N) break;
        run_one(m);
      }
    };
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(nthreads));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ScenarioResult res;
  res.config = cfg;
  res.estimators.resize(E);
  for (std::size_t e = 0; e < E; ++e) {
    EstimatorSummary& s = res.estimators[e];
    s.name = estimators[e].name;
    s.per_replicate = std::move(slots[e]);
    double mse = 0.0, cr = 0.0, cil = 0.0;
    int nok = 0, nci = 0;
    for (const ReplicateMetrics& r : s.per_replicate) {
      if (!r.ok) {
        ++s.failures;
        continue;
      }
      ++nok;
      mse += r.mse;
      if (r.has_ci) {
        ++nci;
        cr += r.cr;
        cil += r.cil;
      }
    }
    s.mse_bar = nok > 0 ? mse / nok : kNaN;
    s.cr_bar = nci > 0 ? cr / nci : kNaN;
    s.cil_bar = nci > 0 ? cil / nci : kNaN;
  }
  return res;
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::clean: return "clean";
    case Scenario::cellwise: return "cellwise";
    default: return "casewise";
  }
}

namespace {

void put_num(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

}  // namespace

void write_results_tsv(const std::vector<ScenarioResult>& results, std::ostream& os) {
  os << "scenario\testimator\tn\tp_x\tp_d\tepsilon\tk\tc\treplicates\tseed\t"
        "mse_bar\tcr_bar\tcil_bar\tfailures\n";
  for (const ScenarioResult& r : results) {
    for (const EstimatorSummary& e : r.estimators) {
      os << scenario_name(r.config.scenario) << '\t' << e.name << '\t' << r.config.n << '\t'
         << r.config.p_x << '\t' << r.config.p_d << '\t';
      put_num(os, r.config.epsilon);
      os << '\t';
      put_num(os, r.config.k);
      os << '\t';
      put_num(os, r.config.casewise_size);
      os << '\t' << r.config.replicates << '\t' << r.config.seed << '\t';
      put_num(os, e.mse_bar);
      os << '\t';
      put_num(os, e.cr_bar);
      os << '\t';
      put_num(os, e.cil_bar);
      os << '\t' << e.failures << '\n';
    }
  }
}

void write_plot_data(const std::vector<ScenarioResult>& results, std::ostream& os) {
  os << "scenario\tk\testimator\tmetric\tvalue\n";
  for (const ScenarioResult& r : results) {
    for (const EstimatorSummary& e : r.estimators) {
      const char* metrics[3] = {"mse", "cr", "cil"};
      const double vals[3] = {e.mse_bar, e.cr_bar, e.cil_bar};
      for (int i = 0; i < 3; ++i) {
        os << scenario_name(r.config.scenario) << '\t';
        put_num(os, r.config.k);
        os << '\t' << e.name << '\t' << metrics[i] << '\t';
        put_num(os, vals[i]);
        os << '\n';
      }
    }
  }
}

}  // namespace robust3s
