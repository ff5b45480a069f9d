#ifndef CALIMPUTE_REGRESSION_HPP
#define CALIMPUTE_REGRESSION_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calimpute/error.hpp"

namespace calimpute {

/// Least-squares fit of y = b0 + x.b + e.
struct RegressionFit {
  double intercept = 0.0;
  std::vector<double> slopes;
  /// Weighted RSS / (n - p - 1); zero when the fit has no spare degrees of freedom.
  double residual_variance = 0.0;
  std::size_t n_obs = 0;
  double rss = 0.0;
  std::size_t dof = 0;
  /// (X'WX)^-1 with the intercept first; scaled by the residual variance it
  /// is the usual coefficient covariance.
  Eigen::MatrixXd unscaled_covariance;

  double predict(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    double s = intercept;
    for (std::size_t j = 0; j < slopes.size(); ++j) s += slopes[j] * x(static_cast<Eigen::Index>(j));
    return s;
  }

  /// x.b without the intercept.
  double linear_part(const Eigen::Ref<const Eigen::RowVectorXd>& x) const { return predict(x) - intercept; }
};

/// Regression calibrated so that the (weighted) predictions for the missing
/// rows add up to the part of the known total that is not yet observed.
struct BenchmarkedFit {
  RegressionFit base;
  /// Separate constant used for the missing rows.
  double missing_intercept = 0.0;
  /// Known total minus the (weighted) observed sum.
  double missing_sum_target = 0.0;
  /// Sum of the weights of the missing rows (their count when unweighted).
  double m = 0.0;
};

namespace detail {

inline std::vector<double> unit_weights_if_empty(std::span<const double> w, std::size_t n) {
  if (w.empty()) return std::vector<double>(n, 1.0);
  if (w.size() != n) throw DataError("weights length does not match the number of rows");
  for (double v : w)
    if (!(v > 0.0) || !std::isfinite(v)) throw DataError("weights must be positive and finite");
  return {w.begin(), w.end()};
}

} // namespace detail

/// Weighted least squares with an intercept. Rank deficiency is detected by
/// a column-pivoted QR on the column-equilibrated design.
inline RegressionFit fit_ols(std::span<const double> y, const Eigen::MatrixXd& x, std::span<const double> weights = {}) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (x.rows() != n) throw DataError("design has " + std::to_string(x.rows()) + " rows but response has " + std::to_string(n));
  const Eigen::Index k = x.cols() + 1;
  if (n < k)
    throw InsufficientDataError("need at least " + std::to_string(k) + " observations to fit " + std::to_string(k) +
                                " coefficients, got " + std::to_string(n));
  auto w = detail::unit_weights_if_empty(weights, y.size());

  Eigen::MatrixXd a(n, k);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sw = std::sqrt(w[static_cast<std::size_t>(i)]);
    a(i, 0) = sw;
    a.row(i).tail(k - 1) = sw * x.row(i);
    b(i) = sw * y[static_cast<std::size_t>(i)];
  }
  Eigen::VectorXd norms = a.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < k; ++j) {
    if (norms(j) == 0.0) throw RankDeficientError("predictor column " + std::to_string(j - 1) + " is identically zero", static_cast<std::size_t>(j));
    a.col(j) /= norms(j);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < k) {
    const auto col = static_cast<std::size_t>(qr.colsPermutation().indices()(qr.rank()));
    throw RankDeficientError(col == 0 ? "intercept is collinear with the predictors"
                                      : "predictor column " + std::to_string(col - 1) + " is collinear with the others",
                             col);
  }
  Eigen::VectorXd beta = qr.solve(b);
  Eigen::VectorXd resid = b - a * beta;

  // (A'A)^-1 = P R^-1 R^-T P'
  Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
  Eigen::MatrixXd rinv = r.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  Eigen::MatrixXd cov = qr.colsPermutation() * (rinv * rinv.transpose()) * qr.colsPermutation().transpose();

  RegressionFit fit;
  fit.n_obs = y.size();
  fit.intercept = beta(0) / norms(0);
  fit.slopes.resize(static_cast<std::size_t>(k - 1));
  for (Eigen::Index j = 1; j < k; ++j) fit.slopes[static_cast<std::size_t>(j - 1)] = beta(j) / norms(j);
  fit.unscaled_covariance = cov.array() / (norms * norms.transpose()).array();
  fit.rss = resid.squaredNorm();
  fit.dof = static_cast<std::size_t>(n - k);
  fit.residual_variance = fit.dof > 0 ? fit.rss / static_cast<double>(fit.dof) : 0.0;
  return fit;
}

inline std::vector<double> predict_missing(const BenchmarkedFit& fit, const Eigen::MatrixXd& x_mis) {
  if (static_cast<std::size_t>(x_mis.cols()) != fit.base.slopes.size())
    throw DataError("prediction rows have " + std::to_string(x_mis.cols()) + " columns, fit has " +
                    std::to_string(fit.base.slopes.size()));
  std::vector<double> out(static_cast<std::size_t>(x_mis.rows()));
  for (Eigen::Index i = 0; i < x_mis.rows(); ++i)
    out[static_cast<std::size_t>(i)] = fit.missing_intercept + fit.base.linear_part(x_mis.row(i));
  return out;
}

/// Fits the observed rows and picks the missing-row constant so that
/// sum_i w_i (b1 + x_i.b) over the missing rows equals total - sum w y_obs.
/// The slopes and observed-row intercept coincide with plain least squares.
inline BenchmarkedFit fit_benchmarked(std::span<const double> y_obs, const Eigen::MatrixXd& x_obs,
                                      const Eigen::MatrixXd& x_mis, double total,
                                      std::span<const double> w_obs = {}, std::span<const double> w_mis = {}) {
  if (x_mis.rows() == 0) throw DataError("benchmarked fit needs at least one missing row");
  if (x_mis.cols() != x_obs.cols()) throw DataError("observed and missing designs have different columns");
  auto wo = detail::unit_weights_if_empty(w_obs, y_obs.size());
  auto wm = detail::unit_weights_if_empty(w_mis, static_cast<std::size_t>(x_mis.rows()));

  BenchmarkedFit fit;
  fit.base = fit_ols(y_obs, x_obs, wo);
  double observed = 0.0;
  for (std::size_t i = 0; i < y_obs.size(); ++i) observed += wo[i] * y_obs[i];
  fit.missing_sum_target = total - observed;
  double lin = 0.0;
  for (Eigen::Index i = 0; i < x_mis.rows(); ++i) {
    const double wi = wm[static_cast<std::size_t>(i)];
    fit.m += wi;
    lin += wi * fit.base.linear_part(x_mis.row(i));
  }
  fit.missing_intercept = (fit.missing_sum_target - lin) / fit.m;
  return fit;
}

/// Multiplicative constant c for a model fitted on log scale so that
/// sum_i w_i c exp(z_i.b) equals `missing_total` on the original scale.
inline double log_benchmark_correction(const RegressionFit& log_fit, const Eigen::MatrixXd& z_mis, double missing_total,
                                       std::span<const double> weights = {}) {
  if (!(missing_total > 0.0)) throw DataError("log-scale calibration needs a positive missing total");
  if (static_cast<std::size_t>(z_mis.cols()) != log_fit.slopes.size()) throw DataError("predictor column count mismatch");
  auto w = detail::unit_weights_if_empty(weights, static_cast<std::size_t>(z_mis.rows()));
  double denom = 0.0;
  for (Eigen::Index i = 0; i < z_mis.rows(); ++i)
    denom += w[static_cast<std::size_t>(i)] * std::exp(log_fit.linear_part(z_mis.row(i)));
  if (!(denom > 0.0) || !std::isfinite(denom)) throw DataError("degenerate denominator in log-scale calibration");
  return missing_total / denom;
}

/// c * exp(z_i.b) for every missing row.
inline std::vector<double> log_benchmark_predictions(const RegressionFit& log_fit, const Eigen::MatrixXd& z_mis,
                                                     double correction) {
  std::vector<double> out(static_cast<std::size_t>(z_mis.rows()));
  for (Eigen::Index i = 0; i < z_mis.rows(); ++i)
    out[static_cast<std::size_t>(i)] = correction * std::exp(log_fit.linear_part(z_mis.row(i)));
  return out;
}

} // namespace calimpute

#endif // CALIMPUTE_REGRESSION_HPP
