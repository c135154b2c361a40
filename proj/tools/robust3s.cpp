// Command-line front end: fit robust regressions from CSV, run the cell
// filter standalone, or execute Monte Carlo scenario grids.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "robust3s/csv.hpp"
#include "robust3s/dummy.hpp"
#include "robust3s/filter.hpp"
#include "robust3s/regress.hpp"
#include "robust3s/simulate.hpp"

using nlohmann::json;
using namespace robust3s;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream ss(s);
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::ostream& open_sink(const std::string& path, std::ofstream& file) {
  if (path.empty() || path == "-") return std::cout;
  file.open(path);
  if (!file) throw data_error("cannot open output file: " + path);
  return file;
}

std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string fmt_pvalue(double p) { return p < 0.0005 ? "<0.001" : fmt3(p); }

std::string fmt_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Index distinct_count(Eigen::Ref<const Vector> col) {
  std::set<double> vals(col.data(), col.data() + col.size());
  return static_cast<Index>(vals.size());
}

struct FitOptions {
  std::string input;
  std::string response;
  std::string dummies;
  bool auto_dummies = false;
  std::string method = "3s";
  double alpha = 0.20;
  double xi = 0.01;
  double tau = 0.05;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string format = "table";
  std::string out;
};

Dataset load_dataset(const FitOptions& opt) {
  const io::CsvTable table = io::read_csv_file(opt.input, /*allow_missing=*/false);
  if (opt.response.empty()) throw usage_error("--response is required");
  const Index ycol = table.col(opt.response);
  if (ycol < 0) throw data_error("response column not found: " + opt.response);

  std::set<std::string> dummy_names;
  for (const std::string& name : split_list(opt.dummies)) {
    if (table.col(name) < 0) throw data_error("dummy column not found: " + name);
    dummy_names.insert(name);
  }
  if (dummy_names.count(opt.response)) throw usage_error("response cannot be a dummy column");

  Dataset ds;
  ds.y = table.values.col(ycol);
  ds.y_name = opt.response;
  for (Index j = 0; j < table.values.cols(); ++j) {
    if (j == ycol) continue;
    const std::string& name = table.header[std::size_t(j)];
    const Index nd = distinct_count(table.values.col(j));
    if (nd < 2) throw data_error("constant column rejected: " + name);
    const bool is_dummy = dummy_names.count(name) > 0 || (opt.auto_dummies && nd <= 2);
    if (is_dummy) {
      ds.D.conservativeResize(table.values.rows(), ds.D.cols() + 1);
      ds.D.col(ds.D.cols() - 1) = table.values.col(j);
      ds.d_names.push_back(name);
    } else {
      ds.X.conservativeResize(table.values.rows(), ds.X.cols() + 1);
      ds.X.col(ds.X.cols() - 1) = table.values.col(j);
      ds.x_names.push_back(name);
    }
  }
  if (ds.X.cols() == 0) throw data_error("no continuous covariate columns");
  for (const std::string& name : ds.d_names) {
    const Index j = static_cast<Index>(&name - ds.d_names.data());
    for (Index i = 0; i < ds.D.rows(); ++i)
      if (ds.D(i, j) != 0.0 && ds.D(i, j) != 1.0)
        throw data_error("dummy column must be 0/1 valued: " + name);
  }
  return ds;
}

struct CoefficientRow {
  std::string term;
  double estimate = 0.0;
  bool has_inference = false;
  double std_error = 0.0, ci_lo = 0.0, ci_hi = 0.0, p_value = 0.0;
};

void print_coefficient_table(std::ostream& os, const std::vector<std::string>& header_lines,
                             const std::vector<CoefficientRow>& rows) {
  for (const std::string& h : header_lines) os << "# " << h << '\n';
  os << "term\testimate\tstd.error\tci.low\tci.high\tp.value\n";
  for (const CoefficientRow& r : rows) {
    os << r.term << '\t' << fmt3(r.estimate) << '\t';
    if (r.has_inference)
      os << fmt3(r.std_error) << '\t' << fmt3(r.ci_lo) << '\t' << fmt3(r.ci_hi) << '\t'
         << fmt_pvalue(r.p_value);
    else
      os << "-\t-\t-\t-";
    os << '\n';
  }
}

void print_coefficient_tsv(std::ostream& os, const std::vector<std::string>& header_lines,
                           const std::vector<CoefficientRow>& rows) {
  for (const std::string& h : header_lines) os << "# " << h << '\n';
  os << "term\testimate\tstd.error\tci.low\tci.high\tp.value\n";
  for (const CoefficientRow& r : rows) {
    os << r.term << '\t' << fmt_full(r.estimate) << '\t';
    if (r.has_inference)
      os << fmt_full(r.std_error) << '\t' << fmt_full(r.ci_lo) << '\t' << fmt_full(r.ci_hi) << '\t'
         << fmt_full(r.p_value);
    else
      os << "-\t-\t-\t-";
    os << '\n';
  }
}

json filter_summary_json(const FilterReport& rep, const std::vector<std::string>& names) {
  json per = json::array();
  for (std::size_t j = 0; j < rep.per_variable.size(); ++j) {
    const VariableFilter& vf = rep.per_variable[j];
    json v;
    v["variable"] = j < names.size() ? names[j] : ("x" + std::to_string(j + 1));
    v["flagged"] = int(vf.flags.size() - vf.flags.sum());
    v["exempt"] = vf.exempt;
    v["eta_upper"] = vf.estimates.eta_upper;
    v["s_upper"] = vf.estimates.s_upper;
    v["d_upper"] = vf.upper.d_hat;
    v["t_upper"] = vf.upper.t_hat;
    v["eta_lower"] = vf.estimates.eta_lower;
    v["s_lower"] = vf.estimates.s_lower;
    v["d_lower"] = vf.lower.d_hat;
    v["t_lower"] = vf.lower.t_hat;
    per.push_back(v);
  }
  const double total = double(rep.flags.size());
  json out;
  out["flagged_cells"] = int(rep.flagged_cells());
  out["flagged_fraction"] = total > 0 ? double(rep.flagged_cells()) / total : 0.0;
  out["affected_rows"] = int(rep.flags.rows() - rep.n_complete);
  out["switch_off"] = rep.switch_off;
  out["xi"] = rep.xi;
  out["alpha"] = rep.alpha;
  out["per_variable"] = per;
  out["warnings"] = rep.warnings;
  return out;
}

int cmd_fit(const FitOptions& opt) {
  const Dataset ds = load_dataset(opt);
  const bool has_dummies = ds.D.cols() > 0;
  if (opt.method == "alternating" && !has_dummies)
    throw usage_error("method=alternating requires at least one dummy column");
  if ((opt.method == "3s" || opt.method == "2s") && has_dummies)
    throw usage_error("method=" + opt.method +
                      " handles continuous covariates only; use --method alternating");

  std::vector<CoefficientRow> rows;
  std::vector<std::string> header;
  json j;
  j["command"] = "fit";
  j["method"] = opt.method;
  j["n"] = int(ds.y.size());
  j["seed"] = opt.seed;

  auto push_fit = [&](const RegressionFit& fit, const std::vector<std::string>& names) {
    json coef = json::array();
    for (Index idx = 0; idx <= fit.beta.size(); ++idx) {
      CoefficientRow r;
      r.term = idx == 0 ? "(intercept)" : names[std::size_t(idx - 1)];
      r.estimate = idx == 0 ? fit.intercept : fit.beta[idx - 1];
      r.has_inference = true;
      r.std_error = fit.std_error(idx);
      r.ci_lo = fit.ci[std::size_t(idx)].lo;
      r.ci_hi = fit.ci[std::size_t(idx)].hi;
      r.p_value = fit.p_values[idx];
      rows.push_back(r);
      json c;
      c["term"] = r.term;
      c["estimate"] = r.estimate;
      c["std_error"] = r.std_error;
      c["ci_low"] = r.ci_lo;
      c["ci_high"] = r.ci_hi;
      c["p_value"] = r.p_value;
      coef.push_back(c);
    }
    j["coefficients"] = coef;
    j["sigma_eps"] = fit.sigma_eps;
    if (fit.filter_report.has_value())
      j["filter"] = filter_summary_json(*fit.filter_report, ds.x_names);
  };

  ScatterConfig scfg;
  if (opt.method == "ls") {
    Matrix XD(ds.X.rows(), ds.X.cols() + ds.D.cols());
    XD.leftCols(ds.X.cols()) = ds.X;
    if (has_dummies) XD.rightCols(ds.D.cols()) = ds.D;
    std::vector<std::string> names = ds.x_names;
    names.insert(names.end(), ds.d_names.begin(), ds.d_names.end());
    push_fit(fit_ls(XD, ds.y, opt.tau), names);
  } else if (opt.method == "2s") {
    push_fit(fit_2s(ds.X, ds.y, scfg, opt.tau, opt.seed), ds.x_names);
  } else if (opt.method == "3s") {
    push_fit(fit_3s(ds.X, ds.y, opt.alpha, opt.xi, scfg, opt.tau, opt.seed), ds.x_names);
  } else if (opt.method == "alternating") {
    AlternatingOptions aopt;
    aopt.alpha_filter = opt.alpha;
    aopt.xi = opt.xi;
    aopt.tau = opt.tau;
    aopt.seed = opt.seed;
    const MixedFit mf = alternating_fit(ds.X, ds.D, ds.y, aopt);
    push_fit(mf.inner_fit, ds.x_names);
    // Point estimates only for the dummy block.
    json coef = j["coefficients"];
    for (Index k = 0; k < mf.beta_d.size(); ++k) {
      CoefficientRow r;
      r.term = ds.d_names[std::size_t(k)];
      r.estimate = mf.beta_d[k];
      rows.push_back(r);
      json c;
      c["term"] = r.term;
      c["estimate"] = r.estimate;
      coef.push_back(c);
    }
    j["coefficients"] = coef;
    j["iterations"] = mf.iterations;
    j["converged"] = mf.converged;
  } else {
    throw usage_error("unknown method: " + opt.method);
  }

  header.push_back("method: " + opt.method);
  header.push_back("n: " + std::to_string(ds.y.size()));
  header.push_back("seed: " + std::to_string(opt.seed) +
                   (opt.seed_given ? "" : " (drawn from entropy)"));

  std::ofstream file;
  std::ostream& os = open_sink(opt.out, file);
  if (opt.format == "json")
    os << j.dump(2) << '\n';
  else if (opt.format == "tsv")
    print_coefficient_tsv(os, header, rows);
  else
    print_coefficient_table(os, header, rows);
  return 0;
}

struct FilterOptions {
  std::string input;
  double alpha = 0.20;
  double xi = 0.01;
  std::string out;
  std::string stats_out;
  std::string format = "table";
};

int cmd_filter(const FilterOptions& opt) {
  const io::CsvTable table = io::read_csv_file(opt.input, /*allow_missing=*/false);
  const FilterReport rep = filter_matrix(table.values, opt.alpha, opt.xi);

  Matrix out = table.values;
  for (Index j = 0; j < out.cols(); ++j)
    for (Index i = 0; i < out.rows(); ++i)
      if (rep.flags(i, j) == 0) out(i, j) = std::numeric_limits<double>::quiet_NaN();

  {
    std::ofstream file;
    std::ostream& os = open_sink(opt.out, file);
    io::write_csv(os, table.header, out, "NA");
  }

  if (!opt.stats_out.empty()) {
    std::ofstream file;
    std::ostream& os = open_sink(opt.stats_out, file);
    os << "variable\teta_upper\ts_upper\td_upper\tt_upper\teta_lower\ts_lower\td_lower\t"
          "t_lower\tflagged\texempt\n";
    for (std::size_t v = 0; v < rep.per_variable.size(); ++v) {
      const VariableFilter& vf = rep.per_variable[v];
      os << table.header[v] << '\t' << fmt_full(vf.estimates.eta_upper) << '\t'
         << fmt_full(vf.estimates.s_upper) << '\t' << fmt_full(vf.upper.d_hat) << '\t'
         << fmt_full(vf.upper.t_hat) << '\t' << fmt_full(vf.estimates.eta_lower) << '\t'
         << fmt_full(vf.estimates.s_lower) << '\t' << fmt_full(vf.lower.d_hat) << '\t'
         << fmt_full(vf.lower.t_hat) << '\t' << (vf.flags.size() - vf.flags.sum()) << '\t'
         << (vf.exempt ? 1 : 0) << '\n';
    }
  }

  if (opt.format == "json") {
    std::cout << filter_summary_json(rep, table.header).dump(2) << '\n';
  } else {
    std::cout << "# filtered cells: " << rep.flagged_cells() << " of " << rep.flags.size() << " ("
              << fmt3(100.0 * double(rep.flagged_cells()) / double(rep.flags.size())) << "%)\n"
              << "# affected rows: " << (rep.flags.rows() - rep.n_complete) << " of "
              << rep.flags.rows() << '\n'
              << "# switch_off: " << (rep.switch_off ? "true" : "false") << " (xi = " << rep.xi
              << ")\n";
    for (const std::string& w : rep.warnings) std::cout << "# warning: " << w << '\n';
  }
  return 0;
}

struct SimulateOptions {
  std::vector<std::string> scenarios{"clean"};
  std::string estimators;
  std::string k_grid;
  double epsilon = 0.05;
  int n = 300;
  int p = 15;
  int p_dummy = 0;
  double casewise_size = 0.0;  // 0: auto (8 continuous, 7 mixed)
  int replicates = 200;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool nonnormal = false;
  double alpha = 0.20, xi = 0.01, tau = 0.05;
  int threads = 0;
  std::string format = "tsv";
  std::string out;
  std::string plot_data;
};

int cmd_simulate(const SimulateOptions& opt) {
  if (!(opt.epsilon >= 0.0 && opt.epsilon < 0.5))
    throw usage_error("--epsilon must lie in [0, 0.5)");
  if (opt.replicates < 1) throw usage_error("--replicates must be at least 1");
  if (opt.p_dummy < 0 || opt.p_dummy >= opt.p)
    throw usage_error("--p-dummy must leave at least one continuous covariate");
  std::vector<double> ks;
  for (const std::string& s : split_list(opt.k_grid)) {
    char* end = nullptr;
    const double k = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0' || k < 0.0)
      throw usage_error("--k-grid entries must be nonnegative numbers, got '" + s + "'");
    ks.push_back(k);
  }

  std::string est_csv = opt.estimators;
  if (est_csv.empty()) est_csv = opt.p_dummy > 0 ? "alternating,ls" : "3s,2s,ls";
  std::vector<EstimatorSpec> ests;
  for (const std::string& name : split_list(est_csv)) ests.push_back(make_estimator(name));
  if (ests.empty()) throw usage_error("no estimators selected");

  std::vector<ScenarioResult> results;
  for (const std::string& sc : opt.scenarios) {
    ScenarioConfig cfg;
    cfg.n = opt.n;
    cfg.p_x = opt.p - opt.p_dummy;
    cfg.p_d = opt.p_dummy;
    cfg.replicates = opt.replicates;
    cfg.seed = opt.seed;
    cfg.alpha_filter = opt.alpha;
    cfg.xi = opt.xi;
    cfg.tau = opt.tau;
    cfg.threads = opt.threads;
    cfg.covariate_model = opt.nonnormal ? CovariateModel::nonnormal : CovariateModel::normal;
    cfg.casewise_size = opt.casewise_size > 0.0 ? opt.casewise_size : (opt.p_dummy > 0 ? 7.0 : 8.0);

    if (sc == "clean") {
      cfg.scenario = Scenario::clean;
      cfg.epsilon = 0.0;
      cfg.k = 0.0;
      results.push_back(run_scenario(cfg, ests));
    } else if (sc == "cellwise" || sc == "casewise") {
      cfg.scenario = sc == "cellwise" ? Scenario::cellwise : Scenario::casewise;
      cfg.epsilon = opt.epsilon;
      std::vector<double> grid = ks.empty() ? std::vector<double>{5.0} : ks;
      for (double k : grid) {
        cfg.k = k;
        results.push_back(run_scenario(cfg, ests));
      }
    } else {
      throw usage_error("unknown scenario: " + sc);
    }
  }

  std::ofstream file;
  std::ostream& os = open_sink(opt.out, file);
  os << "# seed: " << opt.seed << (opt.seed_given ? "" : " (drawn from entropy)") << '\n';
  if (opt.format == "json") {
    json root;
    root["seed"] = opt.seed;
    json arr = json::array();
    for (const ScenarioResult& r : results) {
      json jr;
      jr["scenario"] = scenario_name(r.config.scenario);
      jr["n"] = r.config.n;
      jr["p_x"] = r.config.p_x;
      jr["p_d"] = r.config.p_d;
      jr["epsilon"] = r.config.epsilon;
      jr["k"] = r.config.k;
      jr["c"] = r.config.casewise_size;
      jr["replicates"] = r.config.replicates;
      json jest = json::array();
      for (const EstimatorSummary& e : r.estimators) {
        json je;
        je["name"] = e.name;
        je["mse_bar"] = e.mse_bar;
        je["cr_bar"] = std::isnan(e.cr_bar) ? json() : json(e.cr_bar);
        je["cil_bar"] = std::isnan(e.cil_bar) ? json() : json(e.cil_bar);
        je["failures"] = e.failures;
        json reps = json::array();
        for (const ReplicateMetrics& m : e.per_replicate) {
          json jm;
          jm["ok"] = m.ok;
          if (m.ok) {
            jm["mse"] = m.mse;
            if (m.has_ci) {
              jm["cr"] = m.cr;
              jm["cil"] = m.cil;
            }
          } else {
            jm["error"] = m.error;
          }
          reps.push_back(jm);
        }
        je["replicates"] = reps;
        jest.push_back(je);
      }
      jr["estimators"] = jest;
      arr.push_back(jr);
    }
    root["results"] = arr;
    os << root.dump(2) << '\n';
  } else {
    write_results_tsv(results, os);
  }

  if (!opt.plot_data.empty()) {
    std::ofstream pf(opt.plot_data);
    if (!pf) throw data_error("cannot open output file: " + opt.plot_data);
    write_plot_data(results, pf);
  }
  return 0;
}

std::uint64_t entropy_seed() {
  std::random_device rd;
  return (std::uint64_t(rd()) << 32) ^ rd();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust linear regression under cellwise and casewise contamination"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "plain-text key=value configuration file; keys are <subcommand>.<option> "
                 "(or live in a [subcommand] section); command-line flags override the file");

  FitOptions fo;
  CLI::App* fit = app.add_subcommand("fit", "fit a regression model from a CSV file");
  fit->add_option("--input", fo.input, "input CSV path")->required();
  fit->add_option("--response", fo.response, "response column name")->required();
  fit->add_option("--dummies", fo.dummies, "comma-separated dummy column names");
  fit->add_flag("--auto-dummies", fo.auto_dummies, "route columns with <= 2 distinct values to the dummy block");
  fit->add_option("--method", fo.method, "3s | 2s | ls | alternating")->default_val("3s");
  fit->add_option("--alpha", fo.alpha, "filter tail level");
  fit->add_option("--xi", fo.xi, "filter switch threshold");
  fit->add_option("--tau", fo.tau, "1 - confidence level");
  fit->add_option("--seed", fo.seed, "random seed");
  fit->add_option("--format", fo.format, "table | tsv | json")->default_val("table");
  fit->add_option("--out", fo.out, "output path (default stdout)");

  FilterOptions lo;
  CLI::App* flt = app.add_subcommand("filter", "flag cellwise outliers and write the data with NA holes");
  flt->add_option("--input", lo.input, "input CSV path")->required();
  flt->add_option("--alpha", lo.alpha, "filter tail level");
  flt->add_option("--xi", lo.xi, "filter switch threshold");
  flt->add_option("--out", lo.out, "filtered CSV path (default stdout)");
  flt->add_option("--stats-out", lo.stats_out, "per-variable tail statistics TSV path");
  flt->add_option("--format", lo.format, "table | json summary")->default_val("table");

  SimulateOptions so;
  CLI::App* sim = app.add_subcommand("simulate", "run Monte Carlo scenario grids");
  sim->add_option("--scenario", so.scenarios, "clean | cellwise | casewise (repeatable)")
      ->delimiter(',');
  sim->add_option("--estimators", so.estimators, "comma list among 3s,2s,ls,alternating");
  sim->add_option("--epsilon", so.epsilon, "contamination fraction");
  sim->add_option("--k-grid", so.k_grid, "comma list of contamination sizes k");
  sim->add_option("--n", so.n, "cases per replicate");
  sim->add_option("--p", so.p, "total number of covariates");
  sim->add_option("--p-dummy", so.p_dummy, "number of dummy covariates (out of p)");
  sim->add_option("--c", so.casewise_size, "casewise leverage size (default 8, or 7 with dummies)");
  sim->add_option("--replicates", so.replicates, "Monte Carlo replicates");
  sim->add_option("--seed", so.seed, "random seed");
  sim->add_option("--alpha", so.alpha, "filter tail level");
  sim->add_option("--xi", so.xi, "filter switch threshold");
  sim->add_option("--tau", so.tau, "1 - confidence level");
  sim->add_option("--threads", so.threads, "replicate worker threads (0 = auto)");
  sim->add_flag("--nonnormal", so.nonnormal, "non-normal covariate marginals");
  sim->add_option("--format", so.format, "tsv | json")->default_val("tsv");
  sim->add_option("--out", so.out, "results path (default stdout)");
  sim->add_option("--plot-data", so.plot_data, "long-format plot data path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (fit->parsed()) {
      fo.seed_given = fit->count("--seed") > 0;
      if (!fo.seed_given) fo.seed = entropy_seed();
      return cmd_fit(fo);
    }
    if (flt->parsed()) return cmd_filter(lo);
    if (sim->parsed()) {
      so.seed_given = sim->count("--seed") > 0;
      if (!so.seed_given) so.seed = entropy_seed();
      return cmd_simulate(so);
    }
  } catch (const usage_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const data_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const numerical_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}
