#ifndef CALIMPUTE_ADJUST_HPP
#define CALIMPUTE_ADJUST_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "calimpute/error.hpp"
#include "calimpute/fm.hpp"

namespace calimpute {

/// Minimize sum a_i^2 subject to w.a = 0 and lower <= predictions + a <= upper.
struct AdjustmentProblem {
  std::vector<double> predictions;
  std::vector<double> lower;
  std::vector<double> upper;
  /// Empty means all ones.
  std::vector<double> weights;

  std::size_t size() const noexcept { return predictions.size(); }
  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }

  static AdjustmentProblem from_intervals(std::vector<double> predictions, const std::vector<Interval>& intervals,
                                          std::vector<double> weights = {}) {
    AdjustmentProblem p;
    p.predictions = std::move(predictions);
    for (const auto& iv : intervals) {
      p.lower.push_back(iv.lower());
      p.upper.push_back(iv.upper());
    }
    p.weights = std::move(weights);
    return p;
  }
};

struct AdjustOptions {
  /// Stop once max |change in b_i| falls below tol * max(1, max |prediction|).
  double tol = 1e-10;
  std::size_t max_iter = 10000;
  /// Keep sum a^2 of every iterate in AdjustResult::objective_trace.
  bool trace = false;
  /// Magnitude of the quantities the bounds were computed from. The
  /// feasibility check allows 1e-9 of max(1, sum |w x|, sum_scale), so a
  /// problem restated around small residuals keeps the slack of the original.
  double sum_scale = 0.0;
};

struct AdjustResult {
  std::vector<double> adjustment;
  std::size_t iterations = 0;
  std::vector<double> objective_trace;

  double norm_squared() const {
    double s = 0.0;
    for (double a : adjustment) s += a * a;
    return s;
  }
};

namespace detail {

inline void validate(const AdjustmentProblem& p) {
  const std::size_t m = p.size();
  if (p.lower.size() != m || p.upper.size() != m || (!p.weights.empty() && p.weights.size() != m))
    throw DataError("adjustment problem vectors differ in length");
  for (std::size_t i = 0; i < m; ++i) {
    if (!std::isfinite(p.predictions[i])) throw DataError("prediction " + std::to_string(i) + " is not finite");
    if (!(p.lower[i] <= p.upper[i])) throw InfeasibleError("cell " + std::to_string(i) + " has an empty interval");
    if (!(p.weight(i) > 0.0)) throw DataError("weights must be positive");
  }
}

inline double zero_sum_tolerance(const AdjustmentProblem& p, double sum_scale = 0.0) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p.weight(i) * p.predictions[i]);
  return 1e-9 * std::max({1.0, s, sum_scale});
}

/// Fails fast when no adjustment inside the box can have w.a = 0.
inline void check_feasible(const AdjustmentProblem& p, double sum_scale = 0.0) {
  double lo = 0.0, hi = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    lo += p.weight(i) * (p.lower[i] - p.predictions[i]);
    hi += p.weight(i) * (p.upper[i] - p.predictions[i]);
  }
  const double tol = zero_sum_tolerance(p, sum_scale);
  if (lo > tol || hi < -tol)
    throw InfeasibleError("no adjustment within the intervals sums to zero: achievable weighted sum is [" +
                          format_number(lo) + ", " + format_number(hi) + "]");
}

} // namespace detail

/// Iterative scheme for the zero-sum, interval-constrained least-norm
/// adjustment. Writing a_i = b_i - w_i * c, each sweep takes the b_i of
/// smallest magnitude that keeps cell i inside its interval for the current
/// offset c, then sets c = sum w_i b_i / sum w_i^2 (the plain mean of b
/// when unweighted), which makes w.a vanish at the fixed point. Cells whose
/// interval is a single point are held at it and kept out of the mean, which
/// leaves the fixed point unchanged but keeps them from slowing the sweeps.
inline AdjustResult zero_sum_interval_adjust(const AdjustmentProblem& p, const AdjustOptions& opt = {}) {
  detail::validate(p);
  detail::check_feasible(p, opt.sum_scale);
  const std::size_t m = p.size();
  AdjustResult res;
  res.adjustment.assign(m, 0.0);
  if (m == 0) return res;

  std::vector<double> lo(m), hi(m);
  std::vector<std::uint8_t> fixed(m, 0);
  double w2 = 0.0, wfixed = 0.0, scale = 1.0;
  std::vector<double> b(m, 0.0), a(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    lo[i] = p.lower[i] - p.predictions[i];
    hi[i] = p.upper[i] - p.predictions[i];
    scale = std::max(scale, std::abs(p.predictions[i]));
    if (lo[i] == hi[i]) {
      fixed[i] = 1;
      a[i] = lo[i];
      wfixed += p.weight(i) * lo[i];
    } else {
      w2 += p.weight(i) * p.weight(i);
    }
  }
  const double tol = opt.tol * scale;

  double offset = 0.0;
  bool converged = w2 == 0.0;
  for (std::size_t it = 1; it <= opt.max_iter && !converged; ++it) {
    double change = 0.0, wb = wfixed;
    for (std::size_t i = 0; i < m; ++i) {
      if (fixed[i]) continue;
      const double wi = p.weight(i);
      const double shift = wi * offset;
      const double bi = std::clamp(0.0, lo[i] + shift, hi[i] + shift);
      change = std::max(change, std::abs(bi - b[i]));
      b[i] = bi;
      a[i] = bi - shift;
      wb += wi * bi;
    }
    if (opt.trace) {
      double s = 0.0;
      for (double v : a) s += v * v;
      res.objective_trace.push_back(s);
    }
    res.iterations = it;
    offset = wb / w2;
    if (it > 1 && change < tol) converged = true;
  }

  double residual = 0.0;
  for (std::size_t i = 0; i < m; ++i) residual += p.weight(i) * a[i];
  if (!converged) {
    throw ConvergenceError("zero-sum adjustment did not converge in " + std::to_string(opt.max_iter) +
                               " iterations (weighted sum " + detail::format_number(residual) + ")",
                           a, residual);
  }

  // Spread the last rounding residue over the cells strictly inside their box.
  double wf = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    if (a[i] > lo[i] && a[i] < hi[i]) wf += p.weight(i) * p.weight(i);
  if (wf > 0.0 && residual != 0.0) {
    for (std::size_t i = 0; i < m; ++i)
      if (a[i] > lo[i] && a[i] < hi[i]) a[i] = std::clamp(a[i] - residual * p.weight(i) / wf, lo[i], hi[i]);
  }
  res.adjustment = std::move(a);
  return res;
}

/// Exhaustive active-set solution of the same problem, for m <= 12. Every
/// assignment of {free, at lower, at upper} to the cells is solved in closed
/// form; candidates passing primal and dual feasibility are compared.
inline std::vector<double> qp_reference_solve(const AdjustmentProblem& p) {
  detail::validate(p);
  const std::size_t m = p.size();
  if (m > 12) throw UsageError("reference QP solver is limited to 12 cells");
  detail::check_feasible(p);
  if (m == 0) return {};

  std::vector<double> lo(m), hi(m);
  for (std::size_t i = 0; i < m; ++i) {
    lo[i] = p.lower[i] - p.predictions[i];
    hi[i] = p.upper[i] - p.predictions[i];
  }
  const double ztol = detail::zero_sum_tolerance(p);
  double scale = 1.0;
  for (std::size_t i = 0; i < m; ++i) {
    if (std::isfinite(lo[i])) scale = std::max(scale, std::abs(lo[i]));
    if (std::isfinite(hi[i])) scale = std::max(scale, std::abs(hi[i]));
  }
  const double btol = 1e-9 * scale;

  std::size_t combos = 1;
  for (std::size_t i = 0; i < m; ++i) combos *= 3;

  std::vector<int> state(m);
  std::vector<double> a(m), best;
  double best_obj = std::numeric_limits<double>::infinity();
  for (std::size_t code = 0; code < combos; ++code) {
    std::size_t c = code;
    bool usable = true;
    for (std::size_t i = 0; i < m; ++i) {
      state[i] = static_cast<int>(c % 3);  // 0 free, 1 lower, 2 upper
      c /= 3;
      if ((state[i] == 1 && !std::isfinite(lo[i])) || (state[i] == 2 && !std::isfinite(hi[i]))) usable = false;
    }
    if (!usable) continue;

    double fixed = 0.0, wfree = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (state[i] == 0) {
        wfree += p.weight(i) * p.weight(i);
      } else {
        a[i] = state[i] == 1 ? lo[i] : hi[i];
        fixed += p.weight(i) * a[i];
      }
    }

    bool ok = true;
    if (wfree > 0.0) {
      // free cells: a_i = -lambda * w_i
      const double lambda = fixed / wfree;
      for (std::size_t i = 0; i < m && ok; ++i) {
        const double unconstrained = -lambda * p.weight(i);
        if (state[i] == 0) {
          a[i] = unconstrained;
          ok = a[i] >= lo[i] - btol && a[i] <= hi[i] + btol;
        } else if (state[i] == 1) {
          ok = unconstrained <= lo[i] + btol;
        } else {
          ok = unconstrained >= hi[i] - btol;
        }
      }
    } else {
      ok = std::abs(fixed) <= ztol;
      // some multiplier lambda must make every active bound dual feasible
      double lmin = -std::numeric_limits<double>::infinity(), lmax = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m && ok; ++i) {
        if (state[i] == 1) lmin = std::max(lmin, -lo[i] / p.weight(i));
        if (state[i] == 2) lmax = std::min(lmax, -hi[i] / p.weight(i));
      }
      ok = ok && lmin <= lmax + btol;
    }
    if (!ok) continue;

    double obj = 0.0;
    for (double v : a) obj += v * v;
    if (obj < best_obj) {
      best_obj = obj;
      best = a;
    }
  }
  if (best.empty()) throw InfeasibleError("no KKT point found for the adjustment problem");
  return best;
}

/// Nearest point of the box alone, no sum constraint: per-cell clipping.
inline std::vector<double> clip_adjustment(const AdjustmentProblem& p) {
  detail::validate(p);
  std::vector<double> a(p.size());
  for (std::size_t i = 0; i < p.size(); ++i)
    a[i] = std::clamp(p.predictions[i], p.lower[i], p.upper[i]) - p.predictions[i];
  return a;
}

} // namespace calimpute

#endif // CALIMPUTE_ADJUST_HPP
