#pragma once

// Least squares and IRLS fitting for log-link Poisson / quasi-Poisson GLMs.
//
// Every fit reports through BasicGlmFit, which carries the coefficient
// vector, its covariance (expected-information inverse scaled by the
// dispersion), the deviance and the convergence record.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cdq::numerics {

enum class Family {
  Gaussian,      // identity link, least squares
  Poisson,       // log link, dispersion fixed at 1
  QuasiPoisson,  // log link, Pearson dispersion
};

template <typename Scalar>
struct BasicGlmFit {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  Vector coefficients;
  Matrix covariance;
  Vector fitted;  // response scale
  Scalar deviance = 0;
  Scalar dispersion = 1;
  Eigen::Index residual_df = 0;
  int iterations = 0;
  bool converged = false;
  /// Fitted means collapsed to zero (e.g. an all-zero response under the log link).
  bool boundary = false;
  /// Columns dropped as collinear; their coefficients are zero and variances NaN.
  std::vector<Eigen::Index> aliased;

  Vector standard_errors() const { return covariance.diagonal().cwiseSqrt(); }
};

using GlmFit = BasicGlmFit<double>;

class RankDeficientError : public std::invalid_argument {
 public:
  explicit RankDeficientError(Eigen::Index column)
      : std::invalid_argument("design matrix is rank deficient at column " + std::to_string(column)),
        column_(column) {}
  Eigen::Index column() const { return column_; }

 private:
  Eigen::Index column_;
};

class GlmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IrlsOptions {
  int max_iter = 50;
  double tol = 1e-8;
  int max_halvings = 30;
  bool drop_collinear = false;
};

/// Relative pivot tolerance for rank decisions.
inline constexpr double kRankTolerance = 1e-10;

namespace detail {

// Columns that survive a pivoted QR rank check, in original order. Throws
// RankDeficientError naming the first dependent pivot unless dropping is
// allowed.
template <typename Derived>
std::vector<Eigen::Index> independent_columns(const Eigen::MatrixBase<Derived>& design, bool drop,
                                              std::vector<Eigen::Index>* dropped) {
  using Matrix = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::ColPivHouseholderQR<Matrix> qr(design.derived());
  qr.setThreshold(kRankTolerance);
  const Eigen::Index rank = qr.rank();
  const auto& perm = qr.colsPermutation().indices();
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < rank; ++i) keep.push_back(perm(i));
  if (rank < design.cols()) {
    if (!drop) throw RankDeficientError(perm(rank));
    for (Eigen::Index i = rank; i < design.cols(); ++i) dropped->push_back(perm(i));
    std::sort(dropped->begin(), dropped->end());
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> select_columns(
    const Eigen::MatrixBase<Derived>& design, const std::vector<Eigen::Index>& cols) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(design.rows(),
                                                                             static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = design.col(cols[j]);
  return out;
}

// Scatter a reduced fit back onto the full column set.
template <typename Scalar>
void expand(BasicGlmFit<Scalar>& fit, Eigen::Index full_cols, const std::vector<Eigen::Index>& keep) {
  if (static_cast<Eigen::Index>(keep.size()) == full_cols) return;
  const Scalar nan = std::numeric_limits<Scalar>::quiet_NaN();
  typename BasicGlmFit<Scalar>::Vector beta = BasicGlmFit<Scalar>::Vector::Zero(full_cols);
  typename BasicGlmFit<Scalar>::Matrix cov = BasicGlmFit<Scalar>::Matrix::Constant(full_cols, full_cols, nan);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    beta(keep[i]) = fit.coefficients(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < keep.size(); ++j) {
      cov(keep[i], keep[j]) = fit.covariance(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  fit.coefficients = std::move(beta);
  fit.covariance = std::move(cov);
}

template <typename Scalar>
Scalar poisson_deviance(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& y,
                        const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& mu) {
  Scalar dev = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const Scalar term = y(i) > 0 ? y(i) * std::log(y(i) / mu(i)) : Scalar(0);
    dev += term - (y(i) - mu(i));
  }
  return 2 * dev;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> inverse_information(
    const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& weighted_design) {
  const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> info = weighted_design.transpose() * weighted_design;
  const Eigen::Index p = info.rows();
  return info.ldlt().solve(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Identity(p, p));
}

}  // namespace detail

/// Ordinary least squares via column-pivoted QR. Rank deficiency beyond
/// kRankTolerance raises RankDeficientError unless drop_collinear is set.
template <typename DerivedX, typename DerivedY>
BasicGlmFit<typename DerivedX::Scalar> ols_fit(const Eigen::MatrixBase<DerivedX>& design,
                                               const Eigen::MatrixBase<DerivedY>& response,
                                               bool drop_collinear = false) {
  using Scalar = typename DerivedX::Scalar;
  using Fit = BasicGlmFit<Scalar>;
  using Matrix = typename Fit::Matrix;
  using Vector = typename Fit::Vector;
  const Eigen::Index n = design.rows();
  if (response.size() != n) throw std::invalid_argument("ols_fit: response length does not match design rows");
  if (n < design.cols()) throw std::invalid_argument("ols_fit: fewer rows than columns");

  Fit fit;
  const auto keep = detail::independent_columns(design, drop_collinear, &fit.aliased);
  const Matrix x = detail::select_columns(design, keep);
  const Vector y = response;
  Eigen::ColPivHouseholderQR<Matrix> qr(x);
  fit.coefficients = qr.solve(y);
  fit.fitted = x * fit.coefficients;
  fit.deviance = (y - fit.fitted).squaredNorm();
  fit.residual_df = n - x.cols();
  fit.dispersion = fit.residual_df > 0 ? fit.deviance / Scalar(fit.residual_df) : std::numeric_limits<Scalar>::quiet_NaN();
  fit.covariance = detail::inverse_information<Scalar>(x) * fit.dispersion;
  fit.iterations = 1;
  fit.converged = true;
  detail::expand(fit, design.cols(), keep);
  return fit;
}

/// Iteratively reweighted least squares. Gaussian dispatches to ols_fit;
/// the log-link families iterate until the relative deviance change drops
/// below opts.tol, halving steps whenever the deviance rises or overflows.
template <typename DerivedX, typename DerivedY>
BasicGlmFit<typename DerivedX::Scalar> irls_glm(const Eigen::MatrixBase<DerivedX>& design,
                                                const Eigen::MatrixBase<DerivedY>& response, Family family,
                                                const IrlsOptions& opts = {}) {
  using Scalar = typename DerivedX::Scalar;
  using Fit = BasicGlmFit<Scalar>;
  using Matrix = typename Fit::Matrix;
  using Vector = typename Fit::Vector;

  if (family == Family::Gaussian) return ols_fit(design, response, opts.drop_collinear);

  const Eigen::Index n = design.rows();
  if (response.size() != n) throw std::invalid_argument("irls_glm: response length does not match design rows");
  if (n < design.cols()) throw std::invalid_argument("irls_glm: fewer rows than columns");
  const Vector y = response;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!std::isfinite(y(i)) || y(i) < 0) throw std::invalid_argument("irls_glm: responses must be finite and >= 0");
  }

  Fit fit;
  const auto keep = detail::independent_columns(design, opts.drop_collinear, &fit.aliased);
  const Matrix x = detail::select_columns(design, keep);

  Vector mu = y.array() + Scalar(0.1);
  Vector eta = mu.array().log();
  Vector beta = Vector::Zero(x.cols());
  Scalar dev_old = detail::poisson_deviance<Scalar>(y, mu);
  bool have_beta = false;

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    const Vector w = mu;
    const Vector sw = w.array().sqrt();
    const Vector z = eta.array() + (y - mu).array() / mu.array();
    const Matrix xw = x.array().colwise() * sw.array();
    Vector beta_new = Eigen::ColPivHouseholderQR<Matrix>(xw).solve((z.array() * sw.array()).matrix());

    Vector eta_new = x * beta_new;
    Vector mu_new = eta_new.array().exp();
    Scalar dev = detail::poisson_deviance<Scalar>(y, mu_new);
    int halvings = 0;
    while (!std::isfinite(dev) || (have_beta && dev > dev_old * (1 + 1e-12) + 1e-300)) {
      if (!have_beta || ++halvings > opts.max_halvings) {
        throw GlmError("irls_glm: step-halving exhausted without a finite, non-increasing deviance");
      }
      beta_new = (beta_new + beta) / Scalar(2);
      eta_new = x * beta_new;
      mu_new = eta_new.array().exp();
      dev = detail::poisson_deviance<Scalar>(y, mu_new);
    }

    beta = std::move(beta_new);
    eta = std::move(eta_new);
    mu = std::move(mu_new);
    have_beta = true;
    fit.iterations = iter;
    const Scalar change = std::abs(dev - dev_old) / (std::abs(dev) + Scalar(0.1));
    dev_old = dev;
    if (change < opts.tol) {
      fit.converged = true;
      break;
    }
  }

  fit.coefficients = beta;
  fit.fitted = mu;
  fit.deviance = dev_old;
  fit.residual_df = n - x.cols();
  fit.boundary = y.isZero() || (mu.array() < Scalar(1e-8)).any();
  if (family == Family::QuasiPoisson) {
    const Scalar pearson = ((y - mu).array().square() / mu.array()).sum();
    fit.dispersion = fit.residual_df > 0 ? pearson / Scalar(fit.residual_df) : std::numeric_limits<Scalar>::quiet_NaN();
  } else {
    fit.dispersion = 1;
  }
  const Vector sw = mu.array().sqrt();
  const Matrix xw = x.array().colwise() * sw.array();
  fit.covariance = detail::inverse_information<Scalar>(xw) * fit.dispersion;
  detail::expand(fit, design.cols(), keep);
  return fit;
}

}  // namespace cdq::numerics
