#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "cdq/numerics/glm.hpp"
#include "cdq/numerics/ranks.hpp"
#include "cdq/numerics/special.hpp"
#include "oracles/linalg_oracle.hpp"
#include "oracles/special_oracle.hpp"
#include "oracles/stats_oracle.hpp"
#include "test_util.hpp"

using namespace cdq::numerics;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using testutil::vec;

TEST_CASE("reg_incomplete_gamma limits and domain") {
  CHECK(reg_incomplete_gamma(1, 0) == 0);
  CHECK(reg_incomplete_gamma(0.5, std::numeric_limits<double>::infinity()) == 1);
  CHECK(reg_incomplete_gamma(0.5, 1e6) == doctest::Approx(1).epsilon(1e-15));
  CHECK_THROWS_AS(reg_incomplete_gamma(0, 1), std::domain_error);
  CHECK_THROWS_AS(reg_incomplete_gamma(1, -1), std::domain_error);
}

TEST_CASE("reg_incomplete_gamma matches the long-double oracle") {
  const long double ref = oracle::gamma_p(3.0L, 6.296L);
  CHECK(std::fabs(static_cast<double>(ref) - 0.95) < 1e-4);
  CHECK(std::fabs(static_cast<double>(oracle::gamma_p_quadrature(3.0L, 6.296L) - ref)) < 1e-12);
  CHECK(reg_incomplete_gamma(3, 6.296) == doctest::Approx(static_cast<double>(ref)).epsilon(1e-13));
  for (double a : {0.5, 1.0, 2.5, 3.0, 7.0, 20.0, 60.0}) {
    for (double x : {0.01, 0.5, 1.0, 3.0, 6.296, 10.0, 30.0, 80.0}) {
      const double got = reg_incomplete_gamma(a, x);
      CHECK(std::fabs(got - static_cast<double>(oracle::gamma_p(a, x))) < 1e-12);
    }
  }
}

TEST_CASE("series and continued fraction agree near x = a + 1") {
  for (double a : {0.5, 1.0, 3.0, 10.0, 50.0}) {
    for (double dx : {-0.5, -0.1, 0.0, 0.1, 0.5}) {
      const double x = a + 1 + dx;
      const double series = detail::gamma_p_series(a, x);
      const double cf = 1 - detail::gamma_q_continued_fraction(a, x);
      CHECK(std::fabs(series - cf) < 1e-10);
    }
  }
}

TEST_CASE("reg_incomplete_gamma is monotone in x") {
  for (double a : {0.5, 3.0, 30.0}) {
    double prev = 0;
    for (double x = 0; x < 100; x += 0.37) {
      const double p = reg_incomplete_gamma(a, x);
      CHECK(p >= prev);
      CHECK(p <= 1);
      prev = p;
    }
  }
}

TEST_CASE("chisq and F distribution functions") {
  CHECK(chisq_cdf(0, 6) == 0);
  CHECK(std::fabs(chisq_cdf(12.592, 6) - 0.95) < 1e-4);
  for (double x : {0.3, 2.0, 12.592, 40.0}) {
    for (double df : {1.0, 2.0, 6.0, 13.0}) {
      CHECK(chisq_cdf(x, df) == reg_incomplete_gamma(df / 2, x / 2));
      CHECK(chisq_cdf(x, df) + chisq_sf(x, df) == doctest::Approx(1).epsilon(1e-14));
    }
  }
  CHECK(std::fabs(f_cdf(1, 10, 10) - 0.5) < 1e-6);
  CHECK_THROWS_AS(chisq_cdf(1, 0), std::domain_error);
  CHECK_THROWS_AS(f_cdf(1, -1, 3), std::domain_error);
  for (double x : {0.2, 1.0, 2.5, 6.0}) {
    for (auto [d1, d2] : {std::pair{6.0, 40.0}, std::pair{2.0, 5.5}, std::pair{6.0, 60.3}}) {
      CHECK(std::fabs(f_cdf(x, d1, d2) - static_cast<double>(oracle::f_cdf(x, d1, d2))) < 1e-9);
      CHECK(f_cdf(x, d1, d2) + f_sf(x, d1, d2) == doctest::Approx(1).epsilon(1e-13));
    }
  }
  CHECK(normal_cdf(1.959963984540054) == doctest::Approx(0.975).epsilon(1e-12));
  // two-sided t with many df approaches the normal
  CHECK(student_t_two_sided(1.959963984540054, 1e7) == doctest::Approx(0.05).epsilon(1e-5));
  CHECK(student_t_two_sided(0, 5) == doctest::Approx(1));
}

TEST_CASE("midranks examples and properties") {
  CHECK(midranks(vec({5, 1, 3})) == vec({3, 1, 2}));
  CHECK(midranks(vec({2, 2, 2})) == vec({2, 2, 2}));
  CHECK(midranks(vec({1, 2, 2, 4})) == vec({1, 2.5, 2.5, 4}));
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> val(0, 9), len(1, 60);
  for (int rep = 0; rep < 300; ++rep) {
    VectorXd v(len(rng));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = val(rng);
    const VectorXd r = midranks(v);
    const auto ref = oracle::midranks(testutil::stdvec(v));
    const double n = static_cast<double>(v.size());
    CHECK(r.sum() == doctest::Approx(n * (n + 1) / 2));
    CHECK(r.minCoeff() >= 1);
    CHECK(r.maxCoeff() <= n);
    for (Eigen::Index i = 0; i < v.size(); ++i) CHECK(r(i) == ref[static_cast<std::size_t>(i)]);
    CHECK(tie_correction_sum(v) == oracle::ties_t3(testutil::stdvec(v)));
  }
}

TEST_CASE("ols_fit examples") {
  MatrixXd x1 = MatrixXd::Ones(3, 1);
  CHECK(ols_fit(x1, vec({2, 4, 6})).coefficients(0) == doctest::Approx(4).epsilon(1e-14));
  MatrixXd x2(3, 2);
  x2 << 1, 0, 1, 1, 1, 2;
  const auto f = ols_fit(x2, vec({1, 3, 5}));
  CHECK(f.coefficients(0) == doctest::Approx(1).epsilon(1e-13));
  CHECK(f.coefficients(1) == doctest::Approx(2).epsilon(1e-13));
}

TEST_CASE("ols_fit matches the normal-equations oracle on random systems") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 50; ++rep) {
    MatrixXd x(50, 3);
    VectorXd y(50);
    oracle::Rows rows;
    std::vector<double> ys;
    for (int i = 0; i < 50; ++i) {
      x(i, 0) = 1;
      x(i, 1) = g(rng);
      x(i, 2) = g(rng) + 0.3 * x(i, 1);
      y(i) = 1.5 - 2 * x(i, 1) + 0.5 * x(i, 2) + g(rng);
      rows.push_back({x(i, 0), x(i, 1), x(i, 2)});
      ys.push_back(y(i));
    }
    const auto fit = ols_fit(x, y);
    const auto ref = oracle::normal_equations(rows, ys);
    for (int j = 0; j < 3; ++j) CHECK(std::fabs(fit.coefficients(j) - ref[static_cast<std::size_t>(j)]) < 1e-8);
    // residuals orthogonal to the column space
    const VectorXd resid = y - x * fit.coefficients;
    CHECK((x.transpose() * resid).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("ols_fit names the dependent column") {
  MatrixXd x(4, 3);
  x << 1, 1, 2, 1, 2, 4, 1, 3, 6, 1, 4, 8;
  try {
    ols_fit(x, vec({1, 2, 3, 4}));
    FAIL("expected RankDeficientError");
  } catch (const RankDeficientError& e) {
    CHECK((e.column() == 1 || e.column() == 2));
  }
  const auto dropped = ols_fit(x, vec({1, 2, 3, 4}), true);
  CHECK(dropped.aliased.size() == 1);
}

TEST_CASE("irls_glm intercept-only Poisson equals the sample mean") {
  MatrixXd x = MatrixXd::Ones(3, 1);
  const auto f = irls_glm(x, vec({2, 4, 6}), Family::Poisson);
  CHECK(f.converged);
  CHECK(std::fabs(std::exp(f.coefficients(0)) - 4) < 1e-10);
  CHECK(std::fabs(f.coefficients(0) - std::log(4.0)) < 1e-10);
}

TEST_CASE("irls_glm flags an all-zero response as boundary") {
  MatrixXd x = MatrixXd::Ones(5, 1);
  bool flagged = false;
  try {
    const auto f = irls_glm(x, VectorXd::Zero(5), Family::QuasiPoisson);
    flagged = f.boundary;
  } catch (const GlmError&) {
    flagged = true;
  }
  CHECK(flagged);
}

TEST_CASE("irls_glm rejects negative responses") {
  MatrixXd x = MatrixXd::Ones(3, 1);
  CHECK_THROWS_AS(irls_glm(x, vec({1, -1, 2}), Family::Poisson), std::invalid_argument);
}

TEST_CASE("irls_glm intercept score equation and convergence record") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 50; ++rep) {
    MatrixXd x(80, 2);
    VectorXd mean(80);
    for (int t = 0; t < 80; ++t) {
      x(t, 0) = 1;
      x(t, 1) = t + 1;
      mean(t) = std::exp(1.0 + 0.03 * (t + 1));
    }
    const VectorXd y = testutil::poisson_series(rng, mean);
    IrlsOptions opts;
    opts.tol = 1e-10;
    const auto f = irls_glm(x, y, Family::QuasiPoisson, opts);
    CHECK(f.converged);
    CHECK(std::fabs(f.fitted.sum() - y.sum()) / y.sum() < 1e-8);
    CHECK(f.dispersion > 0);
    CHECK(f.iterations <= opts.max_iter);
  }
}

TEST_CASE("Gaussian irls_glm equals ols_fit") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  MatrixXd x(30, 2);
  VectorXd y(30);
  for (int i = 0; i < 30; ++i) {
    x(i, 0) = 1;
    x(i, 1) = i;
    y(i) = 3 + 0.2 * i + g(rng);
  }
  const auto a = ols_fit(x, y);
  const auto b = irls_glm(x, y, Family::Gaussian);
  CHECK((a.coefficients - b.coefficients).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("irls_glm step-halving survives a poor start") {
  MatrixXd x(20, 2);
  VectorXd y(20);
  for (int i = 0; i < 20; ++i) {
    x(i, 0) = 1;
    x(i, 1) = i * 3.0;
    y(i) = i < 19 ? 0 : 500;
  }
  IrlsOptions opts;
  opts.max_iter = 200;
  const auto f = irls_glm(x, y, Family::Poisson, opts);
  CHECK(std::isfinite(f.deviance));
}
