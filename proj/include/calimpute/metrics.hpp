#ifndef CALIMPUTE_METRICS_HPP
#define CALIMPUTE_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "calimpute/data.hpp"
#include "calimpute/error.hpp"

namespace calimpute {

/// Weighted mean absolute deviation over the imputed cells.
inline double d_l1(std::span<const double> original, std::span<const double> imputed,
                   std::span<const double> weights = {}) {
  if (original.size() != imputed.size()) throw DataError("d_L1 inputs differ in length");
  if (original.empty()) throw DataError("d_L1 needs at least one imputed cell");
  if (!weights.empty() && weights.size() != original.size()) throw DataError("d_L1 weights differ in length");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    num += w * std::abs(imputed[i] - original[i]);
    den += w;
  }
  return num / den;
}

/// Two-sample Kolmogorov-Smirnov distance: the largest gap between the two
/// empirical CDFs over the pooled sample points.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DataError("K-S statistic needs two nonempty samples");
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
  std::size_t i = 0, k = 0;
  double d = 0.0;
  while (i < x.size() && k < y.size()) {
    const double t = std::min(x[i], y[k]);
    while (i < x.size() && x[i] == t) ++i;
    while (k < y.size() && y[k] == t) ++k;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(k) / ny));
  }
  return d;
}

/// Standard deviation with denominator n.
inline double population_std(std::span<const double> x) {
  if (x.empty()) throw DataError("standard deviation of an empty column");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(x.size()));
}

inline double mean_of(std::span<const double> x) {
  if (x.empty()) throw DataError("mean of an empty column");
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

/// 100 (STD_imp - STD_orig) / STD_orig.
inline double std_pct_diff(std::span<const double> original, std::span<const double> imputed) {
  const double so = population_std(original);
  if (!(so > 0.0)) throw DataError("original column has zero standard deviation");
  return 100.0 * (population_std(imputed) - so) / so;
}

inline double weighted_pearson(std::span<const double> x, std::span<const double> y,
                               std::span<const double> weights = {}) {
  if (x.size() != y.size() || x.empty()) throw DataError("correlation inputs must be nonempty and of equal length");
  double sw = 0.0, mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    sw += w;
    mx += w * x[i];
    my += w * y[i];
  }
  mx /= sw;
  my /= sw;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    sxy += w * (x[i] - mx) * (y[i] - my);
    sxx += w * (x[i] - mx) * (x[i] - mx);
    syy += w * (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

struct VariableMetrics {
  std::size_t imputed = 0;
  /// NaN when the column has no imputed cells.
  double d_l1 = std::numeric_limits<double>::quiet_NaN();
  double ks = std::numeric_limits<double>::quiet_NaN();
  double std_pct_diff = std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  double std = 0.0;
};

struct MetricReport {
  std::map<std::string, VariableMetrics> variables;
  std::map<std::pair<std::string, std::string>, double> correlations;
};

/// Compares an imputed table with the complete truth; `mask` marks the
/// imputed cells. Correlations are computed for every column pair.
inline MetricReport evaluate_imputation(const DataMatrix& truth, const DataMatrix& imputed, const Mask& mask) {
  if (truth.columns() != imputed.columns() || truth.rows() != imputed.rows())
    throw DataError("truth and imputed tables differ in shape or column names");
  if (mask.rows() != truth.rows() || mask.cols() != truth.cols()) throw DataError("mask shape does not match the data");
  MetricReport rep;
  for (std::size_t j = 0; j < truth.cols(); ++j) {
    auto t = truth.column_values(j), m = imputed.column_values(j);
    for (std::size_t i = 0; i < truth.rows(); ++i) {
      if (std::isnan(t[i])) throw DataError("truth has a missing cell in column '" + truth.columns()[j] + "'");
      if (std::isnan(m[i])) throw DataError("imputed table still has a missing cell in column '" + truth.columns()[j] + "'");
    }
    VariableMetrics vm;
    vm.mean = mean_of(m);
    vm.std = population_std(m);
    std::vector<double> orig, imp, w;
    for (std::size_t i = 0; i < truth.rows(); ++i)
      if (mask(i, j)) {
        orig.push_back(t[i]);
        imp.push_back(m[i]);
        w.push_back(imputed.weight(i));
      }
    vm.imputed = orig.size();
    if (!orig.empty()) {
      vm.d_l1 = d_l1(orig, imp, w);
      vm.ks = ks_statistic(orig, imp);
      if (population_std(t) > 0.0) vm.std_pct_diff = std_pct_diff(t, m);
    }
    rep.variables.emplace(truth.columns()[j], vm);
  }
  for (std::size_t a = 0; a < truth.cols(); ++a)
    for (std::size_t b = a + 1; b < truth.cols(); ++b)
      rep.correlations[{truth.columns()[a], truth.columns()[b]}] =
          weighted_pearson(imputed.column_values(a), imputed.column_values(b), imputed.weights());
  return rep;
}

} // namespace calimpute

#endif // CALIMPUTE_METRICS_HPP
