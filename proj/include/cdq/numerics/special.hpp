#pragma once

// Special functions behind every p-value in the toolkit.

namespace cdq::numerics {

/// Regularized lower incomplete gamma P(a, x). Throws std::domain_error for
/// a <= 0 or x < 0.
double reg_incomplete_gamma(double a, double x);
/// Upper tail Q(a, x) = 1 - P(a, x), computed without cancellation.
double reg_incomplete_gamma_upper(double a, double x);

/// Regularized incomplete beta I_x(a, b).
double reg_incomplete_beta(double a, double b, double x);

double chisq_cdf(double x, double df);
double chisq_sf(double x, double df);
double f_cdf(double x, double df1, double df2);
double f_sf(double x, double df1, double df2);
double normal_cdf(double x);
/// Two-sided p-value of a Student t statistic.
double student_t_two_sided(double t, double df);

namespace detail {
// Exposed so tests can check the two branches agree where they meet.
double gamma_p_series(double a, double x);
double gamma_q_continued_fraction(double a, double x);
}  // namespace detail

}  // namespace cdq::numerics
