#pragma once

// Scalar distribution functions used across the project: standard normal,
// chi-square, Fisher F and Pareto. Quantiles of chi-square and F are obtained
// by safeguarded Newton iteration on series / continued-fraction CDFs and are
// accurate to about 1e-12; no external math library is involved.

namespace robust3s {

double norm_pdf(double x);
double norm_cdf(double x);
/// Inverse standard normal CDF. Exact 0 at p = 0.5, +-infinity at p in {0,1}.
double norm_quantile(double p);

/// Regularized lower/upper incomplete gamma functions P(a,x), Q(a,x).
double gamma_p(double a, double x);
double gamma_q(double a, double x);

/// Regularized incomplete beta function I_x(a, b).
double beta_inc(double a, double b, double x);

double chi2_pdf(double x, double k);
double chi2_cdf(double x, double k);
double chi2_quantile(double p, double k);

double f_cdf(double x, double d1, double d2);
double f_quantile(double p, double d1, double d2);

double pareto_cdf(double x, double xm, double a);
double pareto_quantile(double p, double xm, double a);

}  // namespace robust3s
