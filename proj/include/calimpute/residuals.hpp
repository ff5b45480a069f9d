#ifndef CALIMPUTE_RESIDUALS_HPP
#define CALIMPUTE_RESIDUALS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "calimpute/adjust.hpp"
#include "calimpute/error.hpp"
#include "calimpute/fm.hpp"
#include "calimpute/rng.hpp"

namespace calimpute {

struct ResidualDraw {
  double value = 0.0;
  /// Acceptance/rejection proposals used (0 when no draw was needed).
  std::size_t attempts = 0;
  bool fallback_used = false;
};

inline constexpr std::size_t kDefaultMaxAttempts = 100;

namespace detail {

/// N(0,1) truncated to [a, b] with 0 <= a < b, exponential proposal
/// (Robert 1995); used where normal tail masses underflow.
inline double far_tail_normal(double a, double b, Rng& rng) {
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a - std::log(uniform01(rng)) / lambda;
    if (z > b) continue;
    if (uniform01(rng) <= std::exp(-0.5 * (z - lambda) * (z - lambda))) return z;
  }
}

/// Inverse-CDF draw from N(0,1) truncated to [a, b].
inline double truncated_standard_normal(double a, double b, Rng& rng) {
  // work in the lower tail where the CDF keeps its relative precision
  if (a > 0.0) return -truncated_standard_normal(-b, -a, rng);
  static const boost::math::normal_distribution<double> unit;
  const double pa = std::isfinite(a) ? boost::math::cdf(unit, a) : 0.0;
  const double pb = std::isfinite(b) ? boost::math::cdf(unit, b) : 1.0;
  if (pb <= 0.0) return -far_tail_normal(-b, -a, rng);
  if (!(pb > pa)) return a + uniform01(rng) * (b - a);
  const double u = pa + uniform01(rng) * (pb - pa);
  return std::clamp(boost::math::quantile(unit, std::clamp(u, pa > 0.0 ? pa : u, pb)), a, b);
}

} // namespace detail

/// Residual from N(0, sigma^2) restricted to `interval`: plain acceptance /
/// rejection for up to `max_attempts` proposals, then an exact inverse-CDF
/// draw so the truncated law is the same either way.
inline ResidualDraw draw_ar_residual(double sigma, const Interval& interval, Rng& rng,
                                     std::size_t max_attempts = kDefaultMaxAttempts) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw DataError("residual standard deviation must be finite and >= 0");
  ResidualDraw d;
  if (interval.degenerate()) {
    d.value = interval.lower();
    return d;
  }
  if (sigma == 0.0) {
    if (!interval.contains(0.0))
      throw InfeasibleError("zero residual variance but 0 lies outside [" + detail::format_number(interval.lower()) +
                            ", " + detail::format_number(interval.upper()) + "]");
    return d;
  }
  while (d.attempts < max_attempts) {
    ++d.attempts;
    const double e = sigma * standard_normal(rng);
    if (interval.contains(e)) {
      d.value = e;
      return d;
    }
  }
  d.fallback_used = true;
  d.value = sigma * detail::truncated_standard_normal(interval.lower() / sigma, interval.upper() / sigma, rng);
  d.value = interval.clamp(d.value);
  return d;
}

struct ResidualVector {
  std::vector<double> values;
  std::size_t attempts = 0;
  std::size_t fallbacks = 0;
  std::size_t adjust_iterations = 0;
};

/// Draws one residual per cell and adjusts the draws as little as possible so
/// their weighted sum is zero while each stays inside its interval.
/// `stream_for(i)` supplies the generator for cell i. With sigma = 0 the
/// draws start at zero and only the adjustment acts.
template <class StreamFor>
ResidualVector benchmarked_residuals(double sigma, const std::vector<Interval>& intervals,
                                     const std::vector<double>& weights, StreamFor&& stream_for,
                                     const AdjustOptions& opt = {}, std::size_t max_attempts = kDefaultMaxAttempts) {
  ResidualVector out;
  std::vector<double> draws(intervals.size(), 0.0);
  if (sigma > 0.0) {
    for (std::size_t i = 0; i < intervals.size(); ++i) {
      Rng rng = stream_for(i);
      auto d = draw_ar_residual(sigma, intervals[i], rng, max_attempts);
      draws[i] = d.value;
      out.attempts += d.attempts;
      out.fallbacks += d.fallback_used ? 1 : 0;
    }
  }
  // Moving the draws onto w.e = 0 first turns the nearest admissible
  // zero-sum vector into a zero-sum adjustment of the moved draws.
  auto w = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };
  double wd = 0.0, ww = 0.0;
  for (std::size_t i = 0; i < draws.size(); ++i) {
    wd += w(i) * draws[i];
    ww += w(i) * w(i);
  }
  std::vector<double> centred(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) centred[i] = draws[i] - w(i) * (ww > 0.0 ? wd / ww : 0.0);
  auto adj = zero_sum_interval_adjust(AdjustmentProblem::from_intervals(centred, intervals, weights), opt);
  out.adjust_iterations = adj.iterations;
  out.values.resize(draws.size());
  for (std::size_t i = 0; i < draws.size(); ++i) out.values[i] = intervals[i].clamp(centred[i] + adj.adjustment[i]);
  return out;
}

/// Sequential variant drawing every cell from one generator.
inline ResidualVector benchmarked_residuals(double sigma, const std::vector<Interval>& intervals,
                                            const std::vector<double>& weights, Rng& rng,
                                            const AdjustOptions& opt = {}) {
  // one fresh sub-stream per cell, taken from rng in cell order
  return benchmarked_residuals(sigma, intervals, weights, [&rng](std::size_t) { return Rng(rng()); }, opt);
}

} // namespace calimpute

#endif // CALIMPUTE_RESIDUALS_HPP
