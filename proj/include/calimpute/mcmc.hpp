#ifndef CALIMPUTE_MCMC_HPP
#define CALIMPUTE_MCMC_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "calimpute/data.hpp"
#include "calimpute/edits.hpp"
#include "calimpute/error.hpp"
#include "calimpute/fm.hpp"
#include "calimpute/metrics.hpp"
#include "calimpute/regression.hpp"
#include "calimpute/residuals.hpp"
#include "calimpute/rng.hpp"

namespace calimpute {

struct PairSelection {
  std::size_t s = 0;
  std::size_t t = 0;
  std::size_t variable = 0;
};

/// Uniform over (unordered record pair, column) combinations where both
/// records have the column imputed. Picks the column with probability
/// proportional to its number of pairs, then a pair, then a fair coin for
/// which record is s.
inline PairSelection select_pair(const Mask& mask, Rng& rng) {
  std::vector<std::uint64_t> pairs(mask.cols());
  std::uint64_t total = 0;
  for (std::size_t j = 0; j < mask.cols(); ++j) {
    const std::uint64_t m = mask.count(j);
    pairs[j] = m * (m > 0 ? m - 1 : 0) / 2;
    total += pairs[j];
  }
  if (total == 0) throw DataError("no two records share an imputed variable; pair refinement is not applicable");
  std::uint64_t u = uniform_index(rng, total);
  std::size_t j = 0;
  while (u >= pairs[j]) u -= pairs[j++];
  const auto rows = mask.rows_missing(j);
  const auto a = uniform_index(rng, rows.size());
  auto b = uniform_index(rng, rows.size() - 1);
  if (b >= a) ++b;
  PairSelection sel{rows[a], rows[b], j};
  if (rng() & 1u) std::swap(sel.s, sel.t);
  return sel;
}

/// Joint constraints on the imputed cells of records s and t, with the rest
/// of the data held fixed. Cell (s, c) is the variable "s.c", (t, c) is "t.c".
struct PairSystem {
  ReducedSystem system;
  std::string target;
  std::map<std::string, std::pair<std::size_t, std::size_t>, std::less<>> cells;
};

namespace detail {

inline void add_prefixed(ReducedSystem& into, const ReducedSystem& from, const std::string& prefix) {
  for (const auto& e : from.edits) {
    Edit r;
    r.kind = e.kind;
    r.constant = e.constant;
    for (const auto& [name, a] : e.coeffs) r.coeffs.emplace(prefix + name, a);
    into.edits.push_back(std::move(r));
  }
}

} // namespace detail

inline PairSystem pair_constraint_system(const DataMatrix& data, const Mask& mask, const EditSystem& edits,
                                         const Totals& totals, std::size_t s, std::size_t t, std::size_t j,
                                         double edit_tol = 1e-9) {
  if (s == t) throw DataError("pair refinement needs two distinct records");
  if (!mask(s, j) || !mask(t, j)) throw DataError("column '" + data.columns()[j] + "' is not imputed in both records");
  PairSystem ps;
  ps.system.origin = s;
  ps.target = "s." + data.columns()[j];
  const std::pair<std::size_t, std::string> sides[2] = {{s, "s."}, {t, "t."}};
  for (const auto& [row, prefix] : sides) {
    Assignment observed;
    for (std::size_t c = 0; c < data.cols(); ++c) {
      if (mask(row, c))
        ps.cells.emplace(prefix + data.columns()[c], std::pair{row, c});
      else
        observed.emplace(data.columns()[c], data(row, c));
    }
    detail::add_prefixed(ps.system, reduce_system(edits, observed, row, edit_tol), prefix);
  }
  for (const auto& [name, total] : totals) {
    const std::size_t c = data.column(name);
    if (!mask(s, c) && !mask(t, c)) continue;
    // the other records' part of the total is held fixed
    double constant = data.weighted_sum(c) - total;
    Edit e;
    e.kind = EditKind::Equality;
    for (const auto& [row, prefix] : sides) {
      if (!mask(row, c)) continue;
      constant -= data.weight(row) * data(row, c);
      e.coeffs.emplace(prefix + name, data.weight(row));
    }
    e.constant = constant;
    ps.system.edits.push_back(std::move(e));
  }
  return ps;
}

/// One draw of the regression parameters from their posterior under the
/// flat prior, and the predictive law it implies for one cell.
struct PosteriorModel {
  /// Intercept first.
  std::vector<double> beta;
  double sigma2 = 0.0;
  double mean = 0.0;
  double variance = 0.0;
};

/// sigma2* = RSS / chi2(dof), beta* ~ N(beta_hat, sigma2* (X'WX)^-1).
inline PosteriorModel posterior_model(const RegressionFit& fit, const Eigen::RowVectorXd& x, Rng& rng) {
  if (fit.dof == 0) throw DataError("posterior draw needs at least one residual degree of freedom");
  PosteriorModel pm;
  const auto k = static_cast<Eigen::Index>(fit.slopes.size() + 1);
  std::chi_squared_distribution<double> chi2(static_cast<double>(fit.dof));
  pm.sigma2 = fit.rss > 0.0 ? fit.rss / chi2(rng) : 0.0;
  Eigen::VectorXd beta(k);
  beta(0) = fit.intercept;
  for (Eigen::Index c = 1; c < k; ++c) beta(c) = fit.slopes[static_cast<std::size_t>(c - 1)];
  if (pm.sigma2 > 0.0) {
    Eigen::LLT<Eigen::MatrixXd> llt(fit.unscaled_covariance);
    if (llt.info() != Eigen::Success) throw DataError("coefficient covariance is not positive definite");
    Eigen::VectorXd z(k);
    for (Eigen::Index c = 0; c < k; ++c) z(c) = standard_normal(rng);
    const Eigen::VectorXd lz = llt.matrixL() * z;
    beta += std::sqrt(pm.sigma2) * lz;
  }
  pm.beta.assign(beta.data(), beta.data() + k);
  pm.mean = beta(0);
  for (Eigen::Index c = 1; c < k; ++c) pm.mean += beta(c) * x(c - 1);
  pm.variance = pm.sigma2;
  return pm;
}

/// Predictive draw restricted to `interval`. With zero variance the mean
/// is moved to the nearest admissible point.
inline double draw_truncated_posterior(const PosteriorModel& model, const Interval& interval, Rng& rng) {
  if (interval.degenerate()) return interval.lower();
  if (!(model.variance > 0.0)) return interval.clamp(model.mean);
  const auto d = draw_ar_residual(std::sqrt(model.variance), interval.shifted(-model.mean), rng);
  return interval.clamp(model.mean + d.value);
}

struct McmcConfig {
  /// Number of pair steps; default 20 per imputed cell.
  std::optional<std::size_t> iterations;
  /// Default: a twentieth of the budget.
  std::optional<std::size_t> checkpoint_every;
  std::uint64_t seed = 0;
  double edit_tol = 1e-9;
  double total_tol = 1e-8;
  FmTolerance fm;
};

struct ColumnSummary {
  double mean = 0.0;
  double std = 0.0;
  /// K-S distance to the previous checkpoint's imputed values (NaN at the first).
  double ks_previous = std::numeric_limits<double>::quiet_NaN();
};

struct Checkpoint {
  std::size_t iteration = 0;
  std::size_t edit_violations = 0;
  double max_total_error = 0.0;
  std::size_t fallbacks = 0;
  std::map<std::string, ColumnSummary> columns;
};

struct McmcResult {
  DataMatrix data;
  std::vector<Checkpoint> trace;
  std::size_t iterations = 0;
  std::size_t fallbacks = 0;
};

namespace detail {

inline std::vector<double> imputed_values(const DataMatrix& d, const Mask& mask, std::size_t j) {
  std::vector<double> out;
  for (std::size_t i = 0; i < d.rows(); ++i)
    if (mask(i, j)) out.push_back(d(i, j));
  return out;
}

inline RegressionFit cell_model(const DataMatrix& d, const Mask& mask, std::size_t s, std::size_t j,
                                Eigen::RowVectorXd& x_s) {
  std::vector<std::size_t> preds;
  for (std::size_t c = 0; c < d.cols(); ++c)
    if (c != j && !mask(s, c)) preds.push_back(c);
  const auto k = static_cast<Eigen::Index>(preds.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(d.rows()), k);
  std::vector<double> y(d.rows());
  for (std::size_t i = 0; i < d.rows(); ++i) {
    y[i] = d(i, j);
    for (Eigen::Index c = 0; c < k; ++c) x(static_cast<Eigen::Index>(i), c) = d(i, preds[static_cast<std::size_t>(c)]);
  }
  x_s = x.row(static_cast<Eigen::Index>(s));
  return fit_ols(y, x, d.weights());
}

} // namespace detail

/// Pair-swap refinement of a complete, consistent data set. Each step picks
/// two records sharing an imputed column, derives the admissible interval of
/// the s cell from both records' edits and the pair's share of every total,
/// draws it from the truncated posterior predictive and repairs the other
/// imputed cells of the pair by back-substitution. Cells left free by the
/// equalities keep their value when it is still admissible.
inline McmcResult mcmc_refine(const DataMatrix& data, const Mask& mask, const EditSystem& edits, const Totals& totals,
                              const McmcConfig& config = {}) {
  if (mask.rows() != data.rows() || mask.cols() != data.cols()) throw DataError("mask shape does not match the data");
  if (data.missing_count() > 0) throw DataError("pair refinement needs a fully imputed data set");
  if (auto bad = edit_violations(data, edits, config.edit_tol); !bad.empty())
    throw DataError("pre-imputed record " + std::to_string(bad.front().first) + " violates the edits");
  for (const auto& [name, total] : totals) {
    const std::size_t c = data.column(name);
    if (std::abs(data.weighted_sum(c) - total) > config.total_tol * std::max(1.0, std::abs(total)))
      throw DataError("pre-imputed column '" + name + "' does not meet its total");
  }

  McmcResult res;
  res.data = data;
  DataMatrix& d = res.data;
  const std::size_t budget = config.iterations.value_or(20 * mask.count());
  const std::size_t every = std::max<std::size_t>(1, config.checkpoint_every.value_or(budget / 20));
  std::vector<std::size_t> imputed_cols;
  for (std::size_t j = 0; j < d.cols(); ++j)
    if (mask.count(j) > 0) imputed_cols.push_back(j);

  std::map<std::string, std::vector<double>> previous;
  auto checkpoint = [&](std::size_t it) {
    Checkpoint cp;
    cp.iteration = it;
    cp.edit_violations = edit_violations(d, edits, config.edit_tol).size();
    cp.max_total_error = max_total_error(d, totals);
    cp.fallbacks = res.fallbacks;
    for (auto j : imputed_cols) {
      auto v = detail::imputed_values(d, mask, j);
      ColumnSummary cs;
      cs.mean = mean_of(v);
      cs.std = population_std(v);
      const auto& name = d.columns()[j];
      if (auto p = previous.find(name); p != previous.end()) cs.ks_previous = ks_statistic(p->second, v);
      previous[name] = std::move(v);
      cp.columns.emplace(name, cs);
    }
    res.trace.push_back(std::move(cp));
  };

  if (budget == 0) {
    checkpoint(0);
    return res;
  }
  Rng rng = make_stream(config.seed, {hash_tag("mcmc")});
  checkpoint(0);
  for (std::size_t it = 1; it <= budget; ++it) {
    const auto sel = select_pair(mask, rng);
    auto ps = pair_constraint_system(d, mask, edits, totals, sel.s, sel.t, sel.variable, config.edit_tol);
    const double current = d(sel.s, sel.variable);
    try {
      auto proj = admissible_interval(ps.system, ps.target, config.fm);
      double scale = std::max(1.0, std::abs(current));
      for (const auto& e : ps.system.edits) scale = std::max(scale, std::abs(e.constant));
      if (!proj.interval.contains(current, config.fm.feasibility * scale))
        throw ConvergenceError("step " + std::to_string(it) + ": current value " + detail::format_number(current) +
                                   " of record " + std::to_string(sel.s) + ", column '" + d.columns()[sel.variable] +
                                   "' lies outside its derived interval [" +
                                   detail::format_number(proj.interval.lower()) + ", " +
                                   detail::format_number(proj.interval.upper()) + "]",
                               {current}, 0.0);
      Eigen::RowVectorXd x_s;
      auto fit = detail::cell_model(d, mask, sel.s, sel.variable, x_s);
      auto model = posterior_model(fit, x_s, rng);
      const double value = draw_truncated_posterior(model, proj.interval, rng);

      Assignment now;
      for (const auto& [name, cell] : ps.cells) now.emplace(name, d(cell.first, cell.second));
      ValueRule keep = [&now](const std::string& v, const Interval& iv) {
        auto f = now.find(v);
        return f == now.end() ? midpoint_rule(v, iv) : iv.clamp(f->second);
      };
      auto values = back_substitute(proj, {{ps.target, value}}, keep, config.fm);

      std::vector<std::pair<std::pair<std::size_t, std::size_t>, double>> undo;
      for (const auto& [name, cell] : ps.cells) {
        auto f = values.find(name);
        if (f == values.end()) continue;
        undo.push_back({cell, d(cell.first, cell.second)});
        d(cell.first, cell.second) = f->second;
      }
      if (!check_record(edits, d.known(sel.s), config.edit_tol).empty() ||
          !check_record(edits, d.known(sel.t), config.edit_tol).empty()) {
        for (const auto& [cell, old] : undo) d(cell.first, cell.second) = old;
        ++res.fallbacks;
      }
    } catch (const InfeasibleError&) {
      ++res.fallbacks;
    }
    res.iterations = it;
    if (it % every == 0 || it == budget) checkpoint(it);
  }
  return res;
}

} // namespace calimpute

#endif // CALIMPUTE_MCMC_HPP
