#ifndef CALIMPUTE_PIPELINE_HPP
#define CALIMPUTE_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "calimpute/adjust.hpp"
#include "calimpute/data.hpp"
#include "calimpute/edits.hpp"
#include "calimpute/error.hpp"
#include "calimpute/fm.hpp"
#include "calimpute/regression.hpp"
#include "calimpute/residuals.hpp"
#include "calimpute/rng.hpp"

namespace calimpute {

enum class Method { UPMA, BPMA, BPMR };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::UPMA: return "upma";
    case Method::BPMA: return "bpma";
    case Method::BPMR: return "bpmr";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  std::string lower(s);
  for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "upma") return Method::UPMA;
  if (lower == "bpma") return Method::BPMA;
  if (lower == "bpmr") return Method::BPMR;
  throw UsageError("unknown method '" + std::string(s) + "'");
}

inline bool benchmarked(Method m) { return m != Method::UPMA; }

struct ImputationConfig {
  Method method = Method::BPMA;
  std::size_t rounds = 2;
  /// First-round predictors per target; targets not listed use the fully
  /// observed columns plus the targets imputed before them.
  std::map<std::string, std::vector<std::string>, std::less<>> predictors;
  /// Empty: ascending missing count, ties by column position.
  std::vector<std::string> variable_order;
  /// Columns modelled on log scale (as response and as predictor).
  std::vector<std::string> log_columns;
  std::uint64_t seed = 0;
  double edit_tol = 1e-9;
  double total_tol = 1e-8;
  FmTolerance fm;
  AdjustOptions adjust;
  std::size_t max_attempts = kDefaultMaxAttempts;
};

/// Summary of one (round, variable) step.
struct StepDiagnostics {
  std::size_t round = 0;
  std::string variable;
  Method method = Method::BPMA;
  std::vector<std::string> predictors;
  std::size_t n_fit = 0;
  std::size_t n_missing = 0;
  double intercept = 0.0;
  /// Constant used for the missing rows (log of the correction on log scale).
  double missing_intercept = std::numeric_limits<double>::quiet_NaN();
  double residual_variance = 0.0;
  std::size_t degenerate = 0;
  std::size_t bounded = 0;
  std::size_t half_open = 0;
  std::size_t unbounded = 0;
  /// Mean width over the finite, non-degenerate intervals (NaN if none).
  double mean_width = std::numeric_limits<double>::quiet_NaN();
  double adjustment_norm = 0.0;
  std::size_t adjust_iterations = 0;
  std::size_t ar_attempts = 0;
  std::size_t ar_fallbacks = 0;
  /// Relative total error of the column after the step (NaN without a total).
  double total_error = std::numeric_limits<double>::quiet_NaN();
};

struct ImputationResult {
  DataMatrix data;
  std::vector<StepDiagnostics> diagnostics;
};

inline std::vector<std::string> variable_order(const DataMatrix& data, const ImputationConfig& config) {
  if (!config.variable_order.empty()) {
    std::vector<std::string> seen;
    for (const auto& v : config.variable_order) {
      if (!data.find_column(v)) throw UsageError("variable order names unknown column '" + v + "'");
      if (std::find(seen.begin(), seen.end(), v) != seen.end()) throw UsageError("variable order repeats '" + v + "'");
      seen.push_back(v);
    }
    for (std::size_t j = 0; j < data.cols(); ++j)
      if (data.missing_count(j) > 0 && std::find(seen.begin(), seen.end(), data.columns()[j]) == seen.end())
        throw UsageError("variable order omits column '" + data.columns()[j] + "' which has missing values");
    return seen;
  }
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < data.cols(); ++j)
    if (data.missing_count(j) > 0) idx.push_back(j);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return data.missing_count(a) < data.missing_count(b); });
  std::vector<std::string> out;
  for (auto j : idx) out.push_back(data.columns()[j]);
  return out;
}

/// Admissible interval of cell (i, j) given every other known cell of row i.
inline Interval cell_interval(const DataMatrix& cur, const EditSystem& edits, std::size_t i, std::size_t j,
                              double edit_tol = 1e-9, const FmTolerance& fm = {}) {
  Assignment known = cur.known(i);
  known.erase(cur.columns()[j]);
  auto reduced = reduce_system(edits, known, i, edit_tol);
  return admissible_interval(reduced, cur.columns()[j], fm).interval;
}

namespace detail {

inline bool contains_name(const std::vector<std::string>& v, std::string_view s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

/// Column j, log-transformed when requested; nonpositive values are rejected.
inline double model_value(const DataMatrix& d, std::size_t i, std::size_t j, bool log_scale) {
  const double v = d(i, j);
  if (!log_scale) return v;
  if (!(v > 0.0)) throw DataError("column '" + d.columns()[j] + "' has a nonpositive value in row " +
                                  std::to_string(i) + " but is modelled on log scale");
  return std::log(v);
}

} // namespace detail

/// Sequential imputation (UPMA, BPMA or BPMR). Each round visits the targets
/// in order: derive every missing cell's interval from its record, fit the
/// regression, predict, move the predictions into their intervals (keeping
/// the total for the benchmarked methods) and write them back. Equality
/// companions of a target are left open and get a one-point interval when
/// their own turn comes.
inline ImputationResult impute(const DataMatrix& data, const EditSystem& edits, const std::optional<Totals>& totals,
                               const ImputationConfig& config) {
  if (config.rounds < 1) throw UsageError("rounds must be at least 1");
  for (const auto& v : edits.variables())
    if (!data.find_column(v)) throw DataError("edit variable '" + v + "' is not a data column");
  for (const auto& [target, preds] : config.predictors) {
    if (!data.find_column(target)) throw UsageError("predictor list for unknown column '" + target + "'");
    for (const auto& p : preds)
      if (!data.find_column(p)) throw UsageError("unknown predictor column '" + p + "'");
  }
  for (const auto& c : config.log_columns)
    if (!data.find_column(c)) throw UsageError("unknown log-scale column '" + c + "'");
  if (totals)
    for (const auto& [name, value] : *totals) {
      if (!data.find_column(name)) throw DataError("total given for unknown column '" + name + "'");
      if (!std::isfinite(value)) throw DataError("total for '" + name + "' is not finite");
    }

  const auto order = variable_order(data, config);
  if (benchmarked(config.method)) {
    if (!totals) throw UsageError(std::string(method_name(config.method)) + " needs known totals");
    for (const auto& v : order)
      if (data.missing_count(data.column(v)) > 0 && !totals->contains(v))
        throw UsageError("no known total for column '" + v + "'");
  }
  for (std::size_t i = 0; i < data.rows(); ++i) reduce_system(edits, data.known(i), i, config.edit_tol);

  ImputationResult res;
  res.data = data;
  DataMatrix& cur = res.data;
  const Mask mask = Mask::of(data);

  for (std::size_t round = 1; round <= config.rounds; ++round) {
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const std::string& name = order[pos];
      const std::size_t j = cur.column(name);
      const auto miss = mask.rows_missing(j);
      if (miss.empty()) continue;
      try {
        if (round > 1)
          for (auto i : miss) cur.set_missing(i, j);

        std::vector<std::string> preds;
        if (auto it = config.predictors.find(name); round == 1 && it != config.predictors.end()) {
          preds = it->second;
        } else {
          for (std::size_t c = 0; c < cur.cols(); ++c) {
            const auto& cn = cur.columns()[c];
            if (c == j) continue;
            const bool earlier = std::find(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pos), cn) !=
                                 order.begin() + static_cast<std::ptrdiff_t>(pos);
            if (round > 1 || mask.count(c) == 0 || earlier) preds.push_back(cn);
          }
        }
        std::vector<std::size_t> pcols;
        for (const auto& p : preds) {
          if (p == name) throw UsageError("column '" + name + "' cannot predict itself");
          pcols.push_back(cur.column(p));
        }

        StepDiagnostics diag;
        diag.round = round;
        diag.variable = name;
        diag.method = config.method;
        diag.predictors = preds;
        diag.n_missing = miss.size();

        std::vector<Interval> iv;
        iv.reserve(miss.size());
        double width_sum = 0.0;
        for (auto i : miss) {
          iv.push_back(cell_interval(cur, edits, i, j, config.edit_tol, config.fm));
          const auto& v = iv.back();
          if (v.degenerate()) {
            ++diag.degenerate;
          } else if (v.has_lower() && v.has_upper()) {
            ++diag.bounded;
            width_sum += v.width();
          } else if (v.has_lower() || v.has_upper()) {
            ++diag.half_open;
          } else {
            ++diag.unbounded;
          }
        }
        if (diag.bounded > 0) diag.mean_width = width_sum / static_cast<double>(diag.bounded);

        const bool log_y = detail::contains_name(config.log_columns, name);
        std::vector<bool> log_x;
        for (const auto& p : preds) log_x.push_back(detail::contains_name(config.log_columns, p));

        std::vector<double> y, w_obs, w_mis;
        std::vector<std::size_t> obs;
        for (std::size_t i = 0; i < cur.rows(); ++i)
          if (!mask(i, j)) obs.push_back(i);
        const auto k = static_cast<Eigen::Index>(pcols.size());
        Eigen::MatrixXd x_obs(static_cast<Eigen::Index>(obs.size()), k);
        Eigen::MatrixXd x_mis(static_cast<Eigen::Index>(miss.size()), k);
        for (std::size_t r = 0; r < obs.size(); ++r) {
          const auto i = obs[r];
          y.push_back(detail::model_value(cur, i, j, log_y));
          w_obs.push_back(cur.weight(i));
          for (Eigen::Index c = 0; c < k; ++c)
            x_obs(static_cast<Eigen::Index>(r), c) = detail::model_value(cur, i, pcols[static_cast<std::size_t>(c)], log_x[static_cast<std::size_t>(c)]);
        }
        for (std::size_t r = 0; r < miss.size(); ++r) {
          const auto i = miss[r];
          w_mis.push_back(cur.weight(i));
          for (Eigen::Index c = 0; c < k; ++c)
            x_mis(static_cast<Eigen::Index>(r), c) = detail::model_value(cur, i, pcols[static_cast<std::size_t>(c)], log_x[static_cast<std::size_t>(c)]);
        }
        diag.n_fit = obs.size();

        std::vector<double> pred;
        double sigma2 = 0.0;
        double total = 0.0;
        if (benchmarked(config.method)) total = totals->at(name);
        if (!log_y) {
          if (benchmarked(config.method)) {
            auto fit = fit_benchmarked(y, x_obs, x_mis, total, w_obs, w_mis);
            pred = predict_missing(fit, x_mis);
            diag.intercept = fit.base.intercept;
            diag.missing_intercept = fit.missing_intercept;
            sigma2 = fit.base.residual_variance;
          } else {
            auto fit = fit_ols(y, x_obs, w_obs);
            for (Eigen::Index r = 0; r < x_mis.rows(); ++r) pred.push_back(fit.predict(x_mis.row(r)));
            diag.intercept = fit.intercept;
            sigma2 = fit.residual_variance;
          }
        } else {
          auto fit = fit_ols(y, x_obs, w_obs);
          diag.intercept = fit.intercept;
          if (benchmarked(config.method)) {
            double observed = 0.0;
            for (auto i : obs) observed += cur.weight(i) * cur(i, j);
            const double c = log_benchmark_correction(fit, x_mis, total - observed, w_mis);
            pred = log_benchmark_predictions(fit, x_mis, c);
            diag.missing_intercept = std::log(c);
          } else {
            for (Eigen::Index r = 0; r < x_mis.rows(); ++r) pred.push_back(std::exp(fit.predict(x_mis.row(r))));
          }
          // residual scale of the back-transformed model, original units
          double rss = 0.0;
          for (std::size_t r = 0; r < obs.size(); ++r) {
            const double e = cur(obs[r], j) - std::exp(fit.predict(x_obs.row(static_cast<Eigen::Index>(r))));
            rss += w_obs[r] * e * e;
          }
          sigma2 = fit.dof > 0 ? rss / static_cast<double>(fit.dof) : 0.0;
        }
        diag.residual_variance = sigma2;

        std::vector<double> values(miss.size());
        if (config.method == Method::UPMA) {
          auto a = clip_adjustment(AdjustmentProblem::from_intervals(pred, iv, w_mis));
          double n2 = 0.0;
          for (std::size_t r = 0; r < miss.size(); ++r) {
            values[r] = pred[r] + a[r];
            n2 += a[r] * a[r];
          }
          diag.adjustment_norm = std::sqrt(n2);
        } else if (config.method == Method::BPMA) {
          auto adj = zero_sum_interval_adjust(AdjustmentProblem::from_intervals(pred, iv, w_mis), config.adjust);
          for (std::size_t r = 0; r < miss.size(); ++r) values[r] = pred[r] + adj.adjustment[r];
          diag.adjustment_norm = std::sqrt(adj.norm_squared());
          diag.adjust_iterations = adj.iterations;
        } else {
          std::vector<Interval> riv;
          riv.reserve(miss.size());
          for (std::size_t r = 0; r < miss.size(); ++r) riv.push_back(iv[r].shifted(-pred[r]));
          AdjustOptions opt = config.adjust;
          for (std::size_t r = 0; r < miss.size(); ++r) opt.sum_scale += std::abs(w_mis[r] * pred[r]);
          const auto tag = hash_tag(name);
          auto draws = benchmarked_residuals(
              std::sqrt(sigma2), riv, w_mis,
              [&](std::size_t r) { return make_stream(config.seed, {round, tag, miss[r]}); }, opt,
              config.max_attempts);
          double n2 = 0.0;
          for (std::size_t r = 0; r < miss.size(); ++r) {
            values[r] = pred[r] + draws.values[r];
            n2 += draws.values[r] * draws.values[r];
          }
          diag.adjustment_norm = std::sqrt(n2);
          diag.adjust_iterations = draws.adjust_iterations;
          diag.ar_attempts = draws.attempts;
          diag.ar_fallbacks = draws.fallbacks;
        }
        for (std::size_t r = 0; r < miss.size(); ++r) cur(miss[r], j) = iv[r].clamp(values[r]);

        if (totals && totals->contains(name)) {
          const double t = totals->at(name);
          diag.total_error = std::abs(cur.weighted_sum(j) - t) / std::max(1.0, std::abs(t));
        }
        res.diagnostics.push_back(std::move(diag));
      } catch (const InfeasibleError& e) {
        throw InfeasibleError("round " + std::to_string(round) + ", variable '" + name + "': " + e.what(), e.witness());
      } catch (const UsageError&) {
        throw;
      } catch (const DataError& e) {
        throw DataError("round " + std::to_string(round) + ", variable '" + name + "': " + e.what());
      }
    }
  }

  auto bad = edit_violations(cur, edits, config.edit_tol);
  if (!bad.empty())
    throw InfeasibleError("imputed record " + std::to_string(bad.front().first) + " violates edit " +
                          std::to_string(bad.front().second.front()) + " (" +
                          to_string(edits[bad.front().second.front()]) + ")");
  if (benchmarked(config.method)) {
    for (const auto& v : order) {
      if (mask.count(cur.column(v)) == 0) continue;
      const double t = totals->at(v);
      const double err = std::abs(cur.weighted_sum(cur.column(v)) - t) / std::max(1.0, std::abs(t));
      if (err > config.total_tol)
        throw InfeasibleError("imputed column '" + v + "' misses its total by a relative " + detail::format_number(err));
    }
  }
  return res;
}

} // namespace calimpute

#endif // CALIMPUTE_PIPELINE_HPP
