#ifndef CALIMPUTE_FM_HPP
#define CALIMPUTE_FM_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "calimpute/edits.hpp"
#include "calimpute/error.hpp"

namespace calimpute {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Admissible range [lower, upper] of one cell; either side may be infinite.
class Interval {
public:
  Interval() = default;

  Interval(double lower, double upper) : lower_(lower), upper_(upper) {
    if (std::isnan(lower) || std::isnan(upper) || lower > upper)
      throw InfeasibleError("empty interval [" + detail::format_number(lower) + ", " + detail::format_number(upper) +
                            "]");
  }

  static Interval unbounded() { return {}; }

  double lower() const noexcept { return lower_; }
  double upper() const noexcept { return upper_; }
  bool has_lower() const noexcept { return std::isfinite(lower_); }
  bool has_upper() const noexcept { return std::isfinite(upper_); }
  bool degenerate() const noexcept { return lower_ == upper_; }
  double width() const noexcept { return upper_ - lower_; }

  bool contains(double x, double tol = 0.0) const noexcept { return x >= lower_ - tol && x <= upper_ + tol; }
  double clamp(double x) const noexcept { return std::min(std::max(x, lower_), upper_); }

  Interval shifted(double by) const { return {lower_ + by, upper_ + by}; }

  friend bool operator==(const Interval&, const Interval&) = default;

private:
  double lower_ = -kInf;
  double upper_ = kInf;
};

/// Tolerances for elimination. `feasibility` is relative to the magnitude of
/// the terms that built a constraint's constant; `cancellation` zeroes
/// coefficients that are rounding residue of an exact cancellation.
struct FmTolerance {
  double feasibility = 1e-9;
  double cancellation = 1e-12;
};

/// Linear expression over named variables.
struct LinearExpr {
  std::map<std::string, double, std::less<>> terms;
  double constant = 0.0;

  double evaluate(const Assignment& values) const {
    double s = constant;
    for (const auto& [name, a] : terms) {
      auto it = values.find(name);
      if (it == values.end()) throw DataError("back-substitution needs a value for '" + name + "'");
      s += a * it->second;
    }
    return s;
  }
};

/// A variable expressed through an equality, recorded during elimination.
struct Substitution {
  std::string variable;
  LinearExpr expression;
};

using SubstitutionStack = std::vector<Substitution>;

/// Dense constraint a.x + b (= | >=) 0 over a LinearSystem's variables.
struct Constraint {
  std::vector<double> coeffs;
  double constant = 0.0;
  EditKind kind = EditKind::Inequality;
  /// Magnitude of the terms summed into `constant`; scales the zero test.
  double scale = 1.0;

  bool is_zero_row() const {
    return std::all_of(coeffs.begin(), coeffs.end(), [](double a) { return a == 0.0; });
  }
};

/// Small dense constraint system; variables are kept sorted by name.
struct LinearSystem {
  std::vector<std::string> variables;
  std::vector<Constraint> rows;

  std::optional<std::size_t> index_of(std::string_view name) const {
    auto it = std::lower_bound(variables.begin(), variables.end(), name,
                               [](const std::string& a, std::string_view b) { return a < b; });
    if (it == variables.end() || *it != name) return std::nullopt;
    return static_cast<std::size_t>(it - variables.begin());
  }

  bool has_equalities() const {
    return std::any_of(rows.begin(), rows.end(), [](const Constraint& c) { return c.kind == EditKind::Equality; });
  }

  std::size_t occurrences(std::size_t var) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [var](const Constraint& c) { return c.coeffs[var] != 0.0; }));
  }

  static LinearSystem from(const ReducedSystem& reduced, std::vector<std::string> extra = {}) {
    LinearSystem sys;
    sys.variables = reduced.variables();
    for (auto& v : extra) sys.variables.push_back(std::move(v));
    std::sort(sys.variables.begin(), sys.variables.end());
    sys.variables.erase(std::unique(sys.variables.begin(), sys.variables.end()), sys.variables.end());
    for (const auto& e : reduced.edits) {
      Constraint c;
      c.coeffs.assign(sys.variables.size(), 0.0);
      for (const auto& [name, a] : e.coeffs) c.coeffs[*sys.index_of(name)] = a;
      c.constant = e.constant;
      c.kind = e.kind;
      c.scale = std::max(1.0, std::abs(e.constant));
      sys.rows.push_back(std::move(c));
    }
    return sys;
  }

  std::vector<Edit> to_edits() const {
    std::vector<Edit> out;
    for (const auto& c : rows) {
      Edit e;
      e.kind = c.kind;
      e.constant = c.constant;
      for (std::size_t j = 0; j < variables.size(); ++j)
        if (c.coeffs[j] != 0.0) e.coeffs.emplace(variables[j], c.coeffs[j]);
      out.push_back(std::move(e));
    }
    return out;
  }
};

namespace detail {

inline std::string describe(const LinearSystem& sys, const Constraint& c) {
  Edit e;
  e.kind = c.kind;
  e.constant = c.constant;
  for (std::size_t j = 0; j < sys.variables.size(); ++j)
    if (c.coeffs[j] != 0.0) e.coeffs.emplace(sys.variables[j], c.coeffs[j]);
  if (e.coeffs.empty()) return format_number(c.constant) + (c.kind == EditKind::Equality ? " = 0" : " >= 0");
  return to_string(e);
}

/// x + m*y with rounding residue of exact cancellation flushed to zero.
inline double combine(double x, double m, double y, double tol) {
  double r = x + m * y;
  if (std::abs(r) <= tol * (std::abs(x) + std::abs(m * y))) return 0.0;
  return r;
}

/// |first nonzero coefficient|, the scale under which parallel rows compare equal.
inline double lead(const Constraint& c) {
  for (double a : c.coeffs)
    if (a != 0.0) return std::abs(a);
  return 1.0;
}

/// Drops rows without variables (raising on a violated one), duplicate rows
/// and inequalities dominated by a parallel, tighter one.
inline void tidy(LinearSystem& sys, const FmTolerance& tol) {
  std::vector<Constraint> kept;
  kept.reserve(sys.rows.size());
  for (auto& c : sys.rows) {
    if (c.is_zero_row()) {
      const double bound = tol.feasibility * std::max(1.0, c.scale);
      bool ok = c.kind == EditKind::Equality ? std::abs(c.constant) <= bound : c.constant >= -bound;
      if (!ok) throw InfeasibleError("constraints are contradictory: derived " + describe(sys, c), describe(sys, c));
      continue;
    }
    // rows keep their own scale; dividing through would round exact bounds
    const double lc = lead(c);
    bool dominated = false;
    for (auto& k : kept) {
      if (k.kind != c.kind) continue;
      const double lk = lead(k);
      bool same = true;
      for (std::size_t j = 0; j < c.coeffs.size() && same; ++j) {
        const double x = c.coeffs[j] / lc;
        same = std::abs(k.coeffs[j] / lk - x) <= tol.cancellation * (1.0 + std::abs(x));
      }
      if (!same) continue;
      if (c.kind == EditKind::Inequality) {
        if (c.constant / lc < k.constant / lk) k = c;
        dominated = true;
        break;
      }
      if (std::abs(c.constant / lc - k.constant / lk) <=
          tol.feasibility * std::max({1.0, c.scale / lc, k.scale / lk})) {
        dominated = true;
        break;
      }
    }
    if (!dominated) kept.push_back(std::move(c));
  }
  sys.rows = std::move(kept);
}

inline void erase_variable(LinearSystem& sys, std::size_t j) {
  sys.variables.erase(sys.variables.begin() + static_cast<std::ptrdiff_t>(j));
  for (auto& c : sys.rows) c.coeffs.erase(c.coeffs.begin() + static_cast<std::ptrdiff_t>(j));
}

} // namespace detail

/// Result of removing every equality by substitution.
struct EqualityElimination {
  LinearSystem inequalities;
  SubstitutionStack stack;
};

/// Solves each equality for one of its variables other than `keep` and
/// substitutes the expression everywhere else. The pivot is the variable with
/// the largest |coefficient|, ties going to the first name. Equalities left
/// involving only `keep` become a pair of opposite inequalities.
inline EqualityElimination eliminate_equalities(LinearSystem sys, std::string_view keep, const FmTolerance& tol = {}) {
  EqualityElimination out;
  const auto keep_index = [&] { return sys.index_of(keep); };

  for (;;) {
    detail::tidy(sys, tol);
    auto kidx = keep_index();
    std::optional<std::size_t> row;
    std::size_t pivot = 0;
    for (std::size_t r = 0; r < sys.rows.size() && !row; ++r) {
      const auto& c = sys.rows[r];
      if (c.kind != EditKind::Equality) continue;
      double best = 0.0;
      for (std::size_t j = 0; j < sys.variables.size(); ++j) {
        if (kidx && j == *kidx) continue;
        if (std::abs(c.coeffs[j]) > best) {
          best = std::abs(c.coeffs[j]);
          pivot = j;
        }
      }
      if (best > 0.0) row = r;
    }
    if (!row) break;

    Constraint eq = std::move(sys.rows[*row]);
    sys.rows.erase(sys.rows.begin() + static_cast<std::ptrdiff_t>(*row));
    const double p = eq.coeffs[pivot];

    // x_pivot = -(sum_{j != pivot} a_j x_j + b) / p
    Substitution sub;
    sub.variable = sys.variables[pivot];
    sub.expression.constant = -eq.constant / p;
    for (std::size_t j = 0; j < sys.variables.size(); ++j)
      if (j != pivot && eq.coeffs[j] != 0.0) sub.expression.terms.emplace(sys.variables[j], -eq.coeffs[j] / p);

    for (auto& c : sys.rows) {
      const double m = c.coeffs[pivot];
      if (m == 0.0) continue;
      const double f = -m / p;
      for (std::size_t j = 0; j < c.coeffs.size(); ++j)
        if (j != pivot) c.coeffs[j] = detail::combine(c.coeffs[j], f, eq.coeffs[j], tol.cancellation);
      c.coeffs[pivot] = 0.0;
      c.constant += f * eq.constant;
      c.scale += std::abs(f) * eq.scale;
    }
    detail::erase_variable(sys, pivot);
    out.stack.push_back(std::move(sub));
  }

  // equalities in `keep` alone: a*x + b = 0  ->  a*x + b >= 0 and -a*x - b >= 0
  std::vector<Constraint> rows;
  const auto kidx = keep_index();
  std::optional<Constraint> fixed;
  for (auto& c : sys.rows) {
    if (c.kind == EditKind::Equality) {
      // two equalities pinning `keep` must agree on its value
      if (kidx && c.coeffs[*kidx] != 0.0) {
        const double v = -c.constant / c.coeffs[*kidx];
        if (!fixed) {
          fixed = c;
        } else if (const double u = -fixed->constant / fixed->coeffs[*kidx];
                   std::abs(u - v) > tol.feasibility * std::max({1.0, std::abs(u), std::abs(v)})) {
          throw InfeasibleError("equalities fix '" + std::string(keep) + "' at both " + detail::format_number(u) +
                                    " and " + detail::format_number(v),
                                detail::describe(sys, *fixed) + "; " + detail::describe(sys, c));
        }
      }
      Constraint neg = c;
      for (double& a : neg.coeffs) a = -a;
      neg.constant = -neg.constant;
      neg.kind = c.kind = EditKind::Inequality;
      rows.push_back(std::move(c));
      rows.push_back(std::move(neg));
    } else {
      rows.push_back(std::move(c));
    }
  }
  sys.rows = std::move(rows);
  detail::tidy(sys, tol);
  out.inequalities = std::move(sys);
  return out;
}

/// Projects an inequality system along `var`: constraints without `var` are
/// kept and every (lower bound, upper bound) pair on `var` yields L <= U.
/// The returned system no longer lists `var`.
inline LinearSystem fourier_motzkin_eliminate(const LinearSystem& sys, std::string_view var,
                                              const FmTolerance& tol = {}) {
  if (sys.has_equalities()) throw UsageError("Fourier-Motzkin elimination needs an inequality-only system");
  auto idx = sys.index_of(var);
  if (!idx) return sys;
  const std::size_t v = *idx;

  LinearSystem out;
  out.variables = sys.variables;
  std::vector<const Constraint*> lower, upper;
  for (const auto& c : sys.rows) {
    if (c.coeffs[v] > 0.0)
      lower.push_back(&c);
    else if (c.coeffs[v] < 0.0)
      upper.push_back(&c);
    else
      out.rows.push_back(c);
  }
  for (const Constraint* lo : lower) {
    for (const Constraint* up : upper) {
      // (-a_up) * lo + a_lo * up cancels var; both multipliers positive
      const double ml = -up->coeffs[v];
      const double mu = lo->coeffs[v];
      Constraint c;
      c.kind = EditKind::Inequality;
      c.coeffs.resize(sys.variables.size());
      for (std::size_t j = 0; j < c.coeffs.size(); ++j)
        c.coeffs[j] = j == v ? 0.0 : detail::combine(ml * lo->coeffs[j], mu, up->coeffs[j], tol.cancellation);
      c.constant = ml * lo->constant + mu * up->constant;
      c.scale = ml * lo->scale + mu * up->scale;
      out.rows.push_back(std::move(c));
    }
  }
  detail::erase_variable(out, v);
  detail::tidy(out, tol);
  return out;
}

/// Bounds on the single unknown `v` of `sys` once every other variable is
/// fixed by `values`. Slightly crossed bounds within tolerance collapse to a point.
inline Interval bounds_for(const LinearSystem& sys, std::string_view v, const Assignment& values,
                           const FmTolerance& tol = {}) {
  auto idx = sys.index_of(v);
  double lo = -kInf, hi = kInf;
  double lo_scale = 1.0, hi_scale = 1.0;
  std::string lo_row, hi_row;
  for (const auto& c : sys.rows) {
    double rest = c.constant;
    double mag = c.scale;
    for (std::size_t j = 0; j < sys.variables.size(); ++j) {
      if ((idx && j == *idx) || c.coeffs[j] == 0.0) continue;
      auto it = values.find(sys.variables[j]);
      if (it == values.end()) throw DataError("no value for '" + sys.variables[j] + "' while bounding '" + std::string(v) + "'");
      rest += c.coeffs[j] * it->second;
      mag += std::abs(c.coeffs[j] * it->second);
    }
    const double a = idx ? c.coeffs[*idx] : 0.0;
    if (a == 0.0) {
      if (rest < -tol.feasibility * std::max(1.0, mag))
        throw InfeasibleError("constraint " + detail::describe(sys, c) + " fails at the given values",
                              detail::describe(sys, c));
      continue;
    }
    const double b = -rest / a;
    if (a > 0.0 && b > lo) {
      lo = b;
      lo_scale = mag / a;
      lo_row = detail::describe(sys, c);
    } else if (a < 0.0 && b < hi) {
      hi = b;
      hi_scale = mag / -a;
      hi_row = detail::describe(sys, c);
    }
  }
  if (lo > hi) {
    if (lo - hi <= tol.feasibility * std::max({1.0, lo_scale, hi_scale})) {
      const double mid = 0.5 * (lo + hi);
      return {mid, mid};
    }
    throw InfeasibleError("no admissible value for '" + std::string(v) + "': " + lo_row + " contradicts " + hi_row,
                          lo_row + " ; " + hi_row);
  }
  return {lo, hi};
}

/// One Fourier-Motzkin step: the system just before `variable` was projected out.
struct FmStage {
  std::string variable;
  LinearSystem system;
};

/// Everything needed to complete a record once the target is chosen.
struct Projection {
  std::string target;
  Interval interval;
  SubstitutionStack stack;
  std::vector<FmStage> stages;
  /// All unknowns of the originating system, sorted by name.
  std::vector<std::string> variables;
};

/// Exact projection of the feasible region onto `target`. Equalities are
/// substituted away first; remaining unknowns are eliminated by
/// Fourier-Motzkin, fewest-occurrence variable first.
inline Projection admissible_interval(const LinearSystem& system, std::string_view target, const FmTolerance& tol = {}) {
  Projection proj;
  proj.target = std::string(target);
  proj.variables = system.variables;
  if (!system.index_of(target)) {
    proj.variables.push_back(proj.target);
    std::sort(proj.variables.begin(), proj.variables.end());
  }

  auto elim = eliminate_equalities(system, target, tol);
  proj.stack = std::move(elim.stack);
  LinearSystem cur = std::move(elim.inequalities);

  for (;;) {
    std::optional<std::size_t> pick;
    std::size_t best = 0;
    for (std::size_t j = 0; j < cur.variables.size(); ++j) {
      if (cur.variables[j] == target) continue;
      std::size_t n = cur.occurrences(j);
      if (!pick || n < best) {
        pick = j;
        best = n;
      }
    }
    if (!pick) break;
    std::string var = cur.variables[*pick];
    LinearSystem next = fourier_motzkin_eliminate(cur, var, tol);
    proj.stages.push_back({std::move(var), std::move(cur)});
    cur = std::move(next);
  }
  proj.interval = bounds_for(cur, target, {}, tol);
  return proj;
}

inline Projection admissible_interval(const ReducedSystem& reduced, std::string_view target,
                                      const FmTolerance& tol = {}) {
  return admissible_interval(LinearSystem::from(reduced, {std::string(target)}), target, tol);
}

/// Picks a value for an eliminated variable inside its derived interval.
using ValueRule = std::function<double(const std::string& variable, const Interval& admissible)>;

/// Midpoint of a finite interval, one unit inside a half-open one, 0 otherwise.
inline double midpoint_rule(const std::string&, const Interval& iv) {
  if (iv.has_lower() && iv.has_upper()) return iv.lower() + 0.5 * (iv.upper() - iv.lower());
  if (iv.has_lower()) return iv.lower() + 1.0;
  if (iv.has_upper()) return iv.upper() - 1.0;
  return 0.0;
}

/// Completes a record from a value of the projection target. Variables
/// removed by Fourier-Motzkin are fixed last-eliminated first, each from its
/// now one-dimensional interval (a value in `assigned` wins, otherwise
/// `rule` decides); equality-eliminated variables follow from the stack.
inline Assignment back_substitute(const Projection& proj, const Assignment& assigned,
                                  const ValueRule& rule = midpoint_rule, const FmTolerance& tol = {}) {
  Assignment values = assigned;
  auto t = values.find(proj.target);
  if (t == values.end()) throw DataError("back-substitution needs a value for target '" + proj.target + "'");
  const double ttol = tol.feasibility * std::max(1.0, std::abs(t->second));
  if (!proj.interval.contains(t->second, ttol))
    throw InfeasibleError("value " + detail::format_number(t->second) + " for '" + proj.target +
                          "' lies outside its admissible interval [" + detail::format_number(proj.interval.lower()) +
                          ", " + detail::format_number(proj.interval.upper()) + "]");

  for (auto stage = proj.stages.rbegin(); stage != proj.stages.rend(); ++stage) {
    Interval iv = bounds_for(stage->system, stage->variable, values, tol);
    auto it = values.find(stage->variable);
    if (it != values.end()) {
      if (!iv.contains(it->second, tol.feasibility * std::max(1.0, std::abs(it->second))))
        throw InfeasibleError("assigned value for '" + stage->variable + "' lies outside its admissible interval");
    } else {
      values[stage->variable] = iv.clamp(rule(stage->variable, iv));
    }
  }
  for (auto sub = proj.stack.rbegin(); sub != proj.stack.rend(); ++sub)
    values[sub->variable] = sub->expression.evaluate(values);
  return values;
}

} // namespace calimpute

#endif // CALIMPUTE_FM_HPP
