// Randomised and golden checks shared by the unit tests (small counts) and
// the acceptance binary (full counts). Each returns a verdict plus a one-line
// account of what was measured.
#ifndef CALIMPUTE_TESTS_CHECKS_HPP
#define CALIMPUTE_TESTS_CHECKS_HPP

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "calimpute.hpp"
#include "oracles.hpp"

namespace checks {

using namespace calimpute;

struct Result {
  bool passed = true;
  std::string detail;
};

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

inline const char* kThreeVariableEdits = "x1 + x2 = x3\nx1 >= x2\nx3 >= 3*x2\nx1 >= 0\nx2 >= 0\nx3 >= 0\n";
inline const char* kFiveVariableEdits = "x1 + x2 + x3 + x4 = x5\nx1 >= 0\nx2 >= 0\nx3 >= 0\nx4 >= 0\nx5 >= 0\n";

/// Record with x1 = 10 and x2, x3 missing: x3 must lie in [10, 15].
inline Result golden_interval() {
  Result r;
  const auto edits = parse_edit_rules(kThreeVariableEdits);
  const auto proj = admissible_interval(reduce_system(edits, {{"x1", 10.0}}), "x3");
  if (std::abs(proj.interval.lower() - 10.0) > 1e-12 || std::abs(proj.interval.upper() - 15.0) > 1e-12) {
    r.passed = false;
    r.detail = "interval [" + fmt(proj.interval.lower()) + ", " + fmt(proj.interval.upper()) + "]";
    return r;
  }
  for (double x3 : {10.0, 12.5, 15.0}) {
    Assignment row = back_substitute(proj, {{"x3", x3}});
    row["x1"] = 10.0;
    if (!check_record(edits, row, 1e-12).empty()) {
      r.passed = false;
      r.detail = "record with x3 = " + fmt(x3) + " fails the edits";
      return r;
    }
  }
  r.detail = "interval [10, 15]; x3 in {10, 12.5, 15} completes consistently";
  return r;
}

/// Two-record pair system: s = (10, 15, ?, ?, ?), t = (?, 30, 25, ?, ?) with
/// the rest of the file folded into a third, fully observed record.
struct PairExample {
  DataMatrix data;
  Mask mask;
  EditSystem edits;
  Totals totals;
};

inline PairExample pair_example() {
  PairExample ex{DataMatrix({"x1", "x2", "x3", "x4", "x5"}, 3), Mask(3, 5), parse_edit_rules(kFiveVariableEdits), {}};
  const double s[5] = {10, 15, 20, 30, 75}, t[5] = {15, 30, 25, 35, 105}, rest[5] = {9975, 11955, 7955, 31935, 61820};
  for (std::size_t j = 0; j < 5; ++j) {
    ex.data(0, j) = s[j];
    ex.data(1, j) = t[j];
    ex.data(2, j) = rest[j];
  }
  for (std::size_t j : {2, 3, 4}) ex.mask.set(0, j);
  for (std::size_t j : {0, 3, 4}) ex.mask.set(1, j);
  ex.totals = {{"x1", 10000}, {"x2", 12000}, {"x3", 8000}, {"x4", 32000}, {"x5", 62000}};
  return ex;
}

inline Result golden_pair() {
  Result r;
  auto ex = pair_example();
  auto ps = pair_constraint_system(ex.data, ex.mask, ex.edits, ex.totals, 0, 1, 4);

  // expected constraint set, each edit in canonical form
  auto expected = parse_edit_rules(
      "25 + s.x3 + s.x4 = s.x5\ns.x3 >= 0\ns.x4 >= 0\ns.x5 >= 0\n"
      "55 + t.x1 + t.x4 = t.x5\nt.x1 >= 0\nt.x4 >= 0\nt.x5 >= 0\n"
      "t.x1 = 15\ns.x3 = 20\ns.x4 + t.x4 = 65\ns.x5 + t.x5 = 180\n");
  auto same = [](const Edit& a, const Edit& b) {
    if (a.kind != b.kind || a.coeffs.size() != b.coeffs.size()) return false;
    const double f = b.coeffs.begin()->second / a.coeffs.begin()->second;
    if (a.kind == EditKind::Inequality && f <= 0.0) return false;
    for (const auto& [name, c] : a.coeffs) {
      auto it = b.coeffs.find(name);
      if (it == b.coeffs.end() || it->second != f * c) return false;
    }
    return b.constant == f * a.constant;
  };
  std::vector<bool> hit(expected.size(), false);
  for (const auto& e : ps.system.edits) {
    bool found = false;
    for (std::size_t k = 0; k < expected.size(); ++k)
      if (!hit[k] && same(e, expected[k])) found = hit[k] = true;
    if (!found) {
      r.passed = false;
      r.detail = "unexpected constraint " + to_string(e);
      return r;
    }
  }
  for (std::size_t k = 0; k < expected.size(); ++k)
    if (!hit[k]) {
      r.passed = false;
      r.detail = "missing constraint " + to_string(expected[k]);
      return r;
    }

  auto proj = admissible_interval(ps.system, ps.target);
  if (ps.target != "s.x5" || proj.interval.lower() != 45.0 || proj.interval.upper() != 110.0) {
    r.passed = false;
    r.detail = "interval for " + ps.target + " is [" + fmt(proj.interval.lower()) + ", " + fmt(proj.interval.upper()) + "]";
    return r;
  }
  auto full = back_substitute(proj, {{"s.x5", 100.0}});
  if (full.at("s.x4") != 55.0 || full.at("t.x4") != 10.0 || full.at("t.x5") != 80.0) {
    r.passed = false;
    r.detail = "back-substitution gave s.x4=" + fmt(full.at("s.x4")) + " t.x4=" + fmt(full.at("t.x4")) +
               " t.x5=" + fmt(full.at("t.x5"));
    return r;
  }
  r.detail = "12 constraints match; s.x5 in [45, 110]; s.x5 = 100 gives s.x4 = 55, t.x4 = 10, t.x5 = 80";
  return r;
}

/// Random feasible instances through BPMA and BPMR (alternating).
inline Result calibration_exactness(int instances, std::uint64_t seed, std::size_t max_rows = 500) {
  Result r;
  std::mt19937_64 rng(seed);
  double worst_total = 0.0;
  std::size_t cells = 0, completed = 0, defects = 0;
  std::vector<std::string> stopped;
  std::string first_defect;
  auto defect = [&](int k, const std::string& what) {
    if (defects++ == 0) first_defect = "instance " + std::to_string(k) + " " + what;
  };
  for (int k = 0; k < instances; ++k) {
    auto inst = oracle::random_instance(rng, max_rows);
    ImputationConfig cfg;
    cfg.method = k % 2 == 0 ? Method::BPMA : Method::BPMR;
    cfg.seed = static_cast<std::uint64_t>(k);
    ImputationResult res;
    try {
      res = impute(inst.masked, inst.edits, inst.totals, cfg);
    } catch (const InfeasibleError&) {
      stopped.push_back(std::to_string(k) + ":" + std::string(method_name(cfg.method)));
      continue;
    } catch (const std::exception& e) {
      defect(k, std::string("threw: ") + e.what());
      continue;
    }
    ++completed;
    cells += inst.masked.missing_count();
    for (const auto& [name, total] : inst.totals) {
      const double s = res.data.weighted_sum(res.data.column(name));
      const double err = std::abs(s - total) / std::max(1.0, std::abs(total));
      worst_total = std::max(worst_total, err);
      if (err > 1e-8) defect(k, "misses the total of " + name + " by " + fmt(err));
    }
    for (std::size_t i = 0; i < res.data.rows(); ++i) {
      Assignment row;
      for (std::size_t j = 0; j < res.data.cols(); ++j) {
        if (res.data.missing(i, j)) defect(k, "left a cell missing");
        if (!inst.masked.missing(i, j) && res.data(i, j) != inst.masked(i, j)) defect(k, "changed an observed cell");
        row[res.data.columns()[j]] = res.data(i, j);
      }
      if (!check_record(inst.edits, row, 1e-9).empty()) defect(k, "record " + std::to_string(i) + " fails an edit");
    }
  }
  r.passed = stopped.empty() && defects == 0;
  std::string d = std::to_string(completed) + "/" + std::to_string(instances) + " instances completed (" +
                  std::to_string(cells) + " imputed cells), worst relative total error " + fmt(worst_total) + ", " +
                  std::to_string(defects) + " defects";
  if (defects) d += " (first: " + first_defect + ")";
  if (!stopped.empty()) {
    d += "; " + std::to_string(stopped.size()) + " stopped as infeasible:";
    for (const auto& s : stopped) d += " " + s;
  }
  r.detail = d;
  return r;
}

/// fit_benchmarked against fit_ols and against the stacked model solved
/// directly with the calibration row imposed exactly.
inline Result regression_equivalence(int instances, std::uint64_t seed) {
  Result r;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> nobs(8, 200), nmis(1, 50), np(0, 4), coin(0, 1);
  std::uniform_real_distribution<double> u(0.0, 10.0), wgt(0.5, 4.0);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_ols = 0.0, worst_oracle = 0.0, worst_cal = 0.0;
  for (int k = 0; k < instances; ++k) {
    const int p = np(rng), no = std::max(nobs(rng), p + 3), nm = nmis(rng);
    const bool weighted = coin(rng) == 1;
    std::vector<double> beta(static_cast<std::size_t>(p));
    for (auto& b : beta) b = 3.0 * g(rng);
    const double b0 = 5.0 * g(rng);
    std::vector<std::vector<double>> xo(static_cast<std::size_t>(no)), xm(static_cast<std::size_t>(nm));
    std::vector<double> y(static_cast<std::size_t>(no)), wo(static_cast<std::size_t>(no), 1.0),
        wm(static_cast<std::size_t>(nm), 1.0);
    Eigen::MatrixXd xo_m(no, p), xm_m(nm, p);
    double total = 0.0;
    for (int i = 0; i < no; ++i) {
      auto& row = xo[static_cast<std::size_t>(i)];
      double yi = b0 + g(rng);
      for (int c = 0; c < p; ++c) {
        row.push_back(u(rng));
        xo_m(i, c) = row.back();
        yi += beta[static_cast<std::size_t>(c)] * row.back();
      }
      y[static_cast<std::size_t>(i)] = yi;
      if (weighted) wo[static_cast<std::size_t>(i)] = wgt(rng);
      total += wo[static_cast<std::size_t>(i)] * yi;
    }
    for (int i = 0; i < nm; ++i) {
      auto& row = xm[static_cast<std::size_t>(i)];
      double yi = b0 + g(rng);
      for (int c = 0; c < p; ++c) {
        row.push_back(u(rng));
        xm_m(i, c) = row.back();
        yi += beta[static_cast<std::size_t>(c)] * row.back();
      }
      if (weighted) wm[static_cast<std::size_t>(i)] = wgt(rng);
      total += wm[static_cast<std::size_t>(i)] * yi;
    }
    const auto bf = fit_benchmarked(y, xo_m, xm_m, total, wo, wm);
    const auto ols = fit_ols(y, xo_m, wo);
    worst_ols = std::max(worst_ols, std::abs(bf.base.intercept - ols.intercept));
    for (int c = 0; c < p; ++c)
      worst_ols = std::max(worst_ols, std::abs(bf.base.slopes[static_cast<std::size_t>(c)] - ols.slopes[static_cast<std::size_t>(c)]));

    const auto st = oracle::stacked_benchmarked(y, xo, wo, xm, wm, total);
    worst_oracle = std::max({worst_oracle, std::abs(bf.base.intercept - st[0]), std::abs(bf.missing_intercept - st[1])});
    for (int c = 0; c < p; ++c)
      worst_oracle = std::max(worst_oracle, std::abs(bf.base.slopes[static_cast<std::size_t>(c)] - st[static_cast<std::size_t>(c) + 2]));

    const auto pred = predict_missing(bf, xm_m);
    double s = 0.0;
    for (int i = 0; i < nm; ++i) s += wm[static_cast<std::size_t>(i)] * pred[static_cast<std::size_t>(i)];
    worst_cal = std::max(worst_cal, std::abs(s - bf.missing_sum_target) / std::max(1.0, std::abs(bf.missing_sum_target)));
  }
  r.passed = worst_ols <= 1e-10 && worst_oracle <= 1e-10 && worst_cal <= 1e-9;
  r.detail = std::to_string(instances) + " instances; max |diff| vs fit_ols " + fmt(worst_ols) +
             ", vs stacked system " + fmt(worst_oracle) + "; calibration error " + fmt(worst_cal);
  return r;
}

/// Random feasible box problems; resampled until 0 is an achievable sum.
inline AdjustmentProblem random_adjustment(std::mt19937_64& rng, std::size_t max_m) {
  std::uniform_int_distribution<std::size_t> size(1, max_m);
  std::uniform_int_distribution<int> side(0, 5);
  std::uniform_real_distribution<double> u(-10.0, 10.0), len(0.0, 8.0), wgt(0.2, 5.0);
  for (;;) {
    AdjustmentProblem p;
    const std::size_t m = size(rng);
    const bool weighted = side(rng) < 3;
    for (std::size_t i = 0; i < m; ++i) {
      const double x = u(rng), c = u(rng), h = len(rng);
      p.predictions.push_back(x);
      // bound layouts: none, lower only, upper only, both, degenerate
      switch (side(rng)) {
        case 0: p.lower.push_back(-kInf); p.upper.push_back(kInf); break;
        case 1: p.lower.push_back(c); p.upper.push_back(kInf); break;
        case 2: p.lower.push_back(-kInf); p.upper.push_back(c); break;
        case 3: p.lower.push_back(c); p.upper.push_back(c); break;
        default: p.lower.push_back(c - h); p.upper.push_back(c + h); break;
      }
      if (weighted) p.weights.push_back(wgt(rng));
    }
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double w = weighted ? p.weights[i] : 1.0;
      lo += w * (p.lower[i] - p.predictions[i]);
      hi += w * (p.upper[i] - p.predictions[i]);
    }
    if (lo < -1e-6 && hi > 1e-6) return p;
  }
}

inline Result qp_equivalence(int instances, std::uint64_t seed, std::size_t max_m = 10) {
  Result r;
  std::mt19937_64 rng(seed);
  double worst_ref = 0.0, worst_kkt = 0.0;
  std::size_t iters = 0;
  for (int k = 0; k < instances; ++k) {
    const auto p = random_adjustment(rng, max_m);
    const auto it = zero_sum_interval_adjust(p);
    const auto ref = qp_reference_solve(p);
    std::vector<double> lo(p.size()), hi(p.size()), w(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      lo[i] = p.lower[i] - p.predictions[i];
      hi[i] = p.upper[i] - p.predictions[i];
      w[i] = p.weight(i);
    }
    const auto kkt = oracle::kkt_adjustment(lo, hi, w);
    double dr = 0.0, dk = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      dr += (it.adjustment[i] - ref[i]) * (it.adjustment[i] - ref[i]);
      dk += (ref[i] - kkt[i]) * (ref[i] - kkt[i]);
    }
    worst_ref = std::max(worst_ref, std::sqrt(dr));
    worst_kkt = std::max(worst_kkt, std::sqrt(dk));
    iters = std::max(iters, it.iterations);
  }
  r.passed = worst_ref <= 1e-6 && worst_kkt <= 1e-6;
  r.detail = std::to_string(instances) + " problems (m <= " + std::to_string(max_m) + "); max ||iterative - enumeration|| " +
             fmt(worst_ref) + ", max ||enumeration - KKT bisection|| " + fmt(worst_kkt) + ", most iterations " +
             std::to_string(iters);
  return r;
}

/// Interval membership against vertex enumeration at a grid of target
/// values, on random boxed systems with up to five variables and up to
/// eight further edits. Some systems are not anchored and may be empty.
inline Result fm_soundness(int systems, std::uint64_t seed) {
  Result r;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nv(1, 5), ne(0, 8), coin(0, 3);
  std::size_t points = 0, infeasible = 0;
  for (int k = 0; k < systems; ++k) {
    const std::size_t n = nv(rng);
    const auto sys = oracle::random_box_system(rng, n, ne(rng), coin(rng) != 0);
    std::vector<std::string> vars;
    for (std::size_t j = 0; j < n; ++j) vars.push_back("v" + std::to_string(j));
    const std::size_t target = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    const auto rows = oracle::dense_rows(sys, vars);

    std::optional<Interval> iv;
    try {
      iv = admissible_interval(LinearSystem::from(ReducedSystem{sys.edits(), 0}), vars[target]).interval;
    } catch (const InfeasibleError&) {
      ++infeasible;
    }
    std::vector<double> grid;
    for (int g = -4; g <= 44; ++g) grid.push_back(0.25 * g);
    if (iv)
      for (double e : {iv->lower(), iv->upper()})
        if (std::isfinite(e))
          for (double d : {-1e-3, 0.0, 1e-3}) grid.push_back(e + d);
    for (double g : grid) {
      const bool in = iv && iv->contains(g, 1e-9 * std::max(1.0, std::abs(g)));
      const bool feasible = oracle::feasible_with(rows, n, target, g);
      ++points;
      if (in != feasible) {
        r.passed = false;
        r.detail = "system " + std::to_string(k) + ", " + vars[target] + " = " + fmt(g) + ": interval says " +
                   (in ? "in" : "out") + ", enumeration says " + (feasible ? "feasible" : "infeasible") + "\n" +
                   print_edits(sys);
        return r;
      }
    }
  }
  r.detail = std::to_string(systems) + " systems (" + std::to_string(infeasible) + " empty), " +
             std::to_string(points) + " grid points, no disagreement";
  return r;
}

inline Result fm_completion(int systems, int draws, std::uint64_t seed) {
  Result r;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nv(2, 5), ne(0, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < systems; ++k) {
    const std::size_t n = nv(rng);
    const auto sys = oracle::random_box_system(rng, n, ne(rng), true);
    const std::string target = "v" + std::to_string(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng));
    const auto proj = admissible_interval(LinearSystem::from(ReducedSystem{sys.edits(), 0}), target);
    const bool uniform_rule = k % 2 == 1;
    ValueRule rule = midpoint_rule;
    if (uniform_rule)
      rule = [&](const std::string&, const Interval& iv) { return iv.lower() + u(rng) * iv.width(); };
    for (int d = 0; d < draws; ++d) {
      const double x = proj.interval.lower() + u(rng) * proj.interval.width();
      const auto full = back_substitute(proj, {{target, x}}, rule);
      if (!check_record(sys, full, 1e-9).empty()) {
        r.passed = false;
        r.detail = "system " + std::to_string(k) + ", " + target + " = " + fmt(x) + " completes to a failing record";
        return r;
      }
    }
  }
  r.detail = std::to_string(systems) + " systems x " + std::to_string(draws) + " draws all complete";
  return r;
}

inline Result fm_monotone(int systems, std::uint64_t seed) {
  Result r;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> nv(2, 4), ne(0, 5);
  for (int k = 0; k < systems; ++k) {
    const std::size_t n = nv(rng);
    const auto base = oracle::random_box_system(rng, n, ne(rng), true);
    auto more = oracle::random_box_system(rng, n, 1, false);
    EditSystem bigger = base;
    bigger.add(more.edits().back());
    const std::string target = "v0";
    const auto a = admissible_interval(LinearSystem::from(ReducedSystem{base.edits(), 0}), target).interval;
    try {
      const auto b = admissible_interval(LinearSystem::from(ReducedSystem{bigger.edits(), 0}), target).interval;
      if (b.lower() < a.lower() - 1e-9 || b.upper() > a.upper() + 1e-9) {
        r.passed = false;
        r.detail = "system " + std::to_string(k) + " widened";
        return r;
      }
    } catch (const InfeasibleError&) {
      // an empty interval is narrower than any other
    }
  }
  r.detail = std::to_string(systems) + " systems";
  return r;
}

inline Result half_normal(int draws, std::uint64_t seed) {
  Result r;
  Rng rng = make_stream(seed, {hash_tag("half-normal")});
  double sum = 0.0;
  std::size_t fallbacks = 0;
  for (int k = 0; k < draws; ++k) {
    const auto d = draw_ar_residual(1.0, Interval(0.0, kInf), rng);
    sum += d.value;
    fallbacks += d.fallback_used ? 1 : 0;
  }
  const double mean = sum / draws, target = std::sqrt(2.0 / std::numbers::pi);
  r.passed = std::abs(mean - target) <= 0.01;
  r.detail = std::to_string(draws) + " draws, mean " + fmt(mean) + " vs " + fmt(target) + " (" +
             std::to_string(fallbacks) + " fallbacks)";
  return r;
}

/// Small income-profile data set, pre-imputed with BPMA.
struct ChainSetup {
  DataMatrix truth;
  DataMatrix start;
  Mask mask;
  EditSystem edits;
  Totals totals;
};

inline ChainSetup chain_setup(std::size_t records, std::uint64_t seed) {
  StudyConfig c;
  c.population_size = records;
  c.sample_size = records;
  Rng rng = make_stream(seed, {hash_tag("chain")});
  auto pop = generate_population(c, rng);
  ChainSetup s;
  s.truth = pop.data;
  s.edits = pop.edits;
  s.mask = apply_mcar(s.truth, c, rng);
  for (std::size_t j = 0; j < s.truth.cols(); ++j) s.totals[s.truth.columns()[j]] = s.truth.weighted_sum(j);
  ImputationConfig ic;
  ic.method = Method::BPMA;
  ic.variable_order = {"x1", "x2"};
  s.start = impute(s.mask.apply(s.truth), s.edits, s.totals, ic).data;
  return s;
}

inline Result mcmc_consistency(std::size_t steps, std::size_t records, std::uint64_t seed) {
  Result r;
  auto s = chain_setup(records, seed);
  McmcConfig mc;
  mc.iterations = steps;
  mc.checkpoint_every = std::max<std::size_t>(1, steps / 100);
  mc.seed = seed;
  const auto res = mcmc_refine(s.start, s.mask, s.edits, s.totals, mc);
  std::size_t bad = 0;
  double worst = 0.0;
  for (const auto& cp : res.trace) {
    bad += cp.edit_violations;
    worst = std::max(worst, cp.max_total_error);
  }
  // independent look at the final state
  std::size_t final_bad = 0, changed_observed = 0;
  for (std::size_t i = 0; i < res.data.rows(); ++i) {
    Assignment row;
    for (std::size_t j = 0; j < res.data.cols(); ++j) {
      row[res.data.columns()[j]] = res.data(i, j);
      if (!s.mask(i, j) && res.data(i, j) != s.truth(i, j)) ++changed_observed;
    }
    final_bad += check_record(s.edits, row, 1e-9).empty() ? 0 : 1;
  }
  double final_total = 0.0;
  for (const auto& [name, total] : s.totals)
    final_total = std::max(final_total, std::abs(res.data.weighted_sum(res.data.column(name)) - total) / std::max(1.0, std::abs(total)));
  r.passed = bad == 0 && worst <= 1e-8 && final_bad == 0 && final_total <= 1e-8 && changed_observed == 0 &&
             res.iterations == steps && res.trace.size() >= 100;
  r.detail = std::to_string(res.iterations) + " steps on " + std::to_string(records) + " records, " +
             std::to_string(res.trace.size()) + " checkpoints, " + std::to_string(bad) + " edit violations, worst total error " +
             fmt(std::max(worst, final_total)) + ", " + std::to_string(res.fallbacks) + " reverted steps";
  return r;
}

} // namespace checks

#endif // CALIMPUTE_TESTS_CHECKS_HPP
