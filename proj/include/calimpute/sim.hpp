#ifndef CALIMPUTE_SIM_HPP
#define CALIMPUTE_SIM_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "calimpute/data.hpp"
#include "calimpute/edits.hpp"
#include "calimpute/error.hpp"
#include "calimpute/mcmc.hpp"
#include "calimpute/metrics.hpp"
#include "calimpute/pipeline.hpp"
#include "calimpute/rng.hpp"

namespace calimpute {

enum class Profile {
  /// x1 + x2 = P, x1 >= x2, P >= 3 x2, all nonnegative.
  Income,
  /// Trivariate normal (x1, x2, P) under nonnegativity only.
  NonNegative,
};

struct StudyConfig {
  Profile profile = Profile::Income;
  std::size_t population_size = 20000;
  std::size_t sample_size = 2000;
  std::size_t replications = 30;
  std::uint64_t seed = 1;
  double mean_x1 = 3902, mean_x2 = 991;
  double std_x1 = 636, std_x2 = 401;
  double corr_x1_x2 = 0.87;
  /// Used by the NonNegative profile; under Income, P is x1 + x2.
  double mean_p = 4893, std_p = 1000;
  double corr_x1_p = 0.66, corr_x2_p = 0.57;
  double rate_x1 = 0.20;
  double rate_both = 0.50;
  double rate_x2 = 0.10;
  std::vector<std::string> methods = {"upma", "bpma", "bpmr", "mcmc"};
  std::size_t rounds = 2;
  /// 0 means the chain's default budget.
  std::size_t mcmc_iterations = 0;
  /// 0 means one worker per hardware thread.
  std::size_t threads = 0;

  void validate() const {
    for (double r : {rate_x1, rate_both, rate_x2})
      if (!(r >= 0.0 && r <= 1.0)) throw UsageError("missing rates must lie in [0, 1]");
    if (sample_size > population_size) throw UsageError("sample size exceeds the population size");
    if (sample_size == 0) throw UsageError("sample size must be positive");
    if (replications < 1) throw UsageError("at least one replication is needed");
    if (rounds < 1) throw UsageError("rounds must be at least 1");
    if (!(std_x1 > 0.0 && std_x2 > 0.0 && std_p > 0.0)) throw UsageError("standard deviations must be positive");
    for (const auto& m : methods)
      if (m != "mcmc") parse_method(m);
  }
};

/// Reads one `key = value` entry; unknown keys are rejected.
inline void set_study_option(StudyConfig& c, const std::string& key, const std::string& value) {
  auto num = [&]() {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size() || !std::isfinite(v)) throw DataError("option '" + key + "' needs a number, got '" + value + "'");
    return v;
  };
  auto count = [&]() {
    const double v = num();
    if (v < 0.0 || v != std::floor(v)) throw DataError("option '" + key + "' needs a nonnegative integer");
    return static_cast<std::size_t>(v);
  };
  if (key == "profile") {
    if (value == "income") c.profile = Profile::Income;
    else if (value == "nonnegative") c.profile = Profile::NonNegative;
    else throw DataError("unknown profile '" + value + "'");
  } else if (key == "population_size") c.population_size = count();
  else if (key == "sample_size") c.sample_size = count();
  else if (key == "replications") c.replications = count();
  else if (key == "seed") {
    std::size_t used = 0;
    try {
      c.seed = std::stoull(value, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != value.size()) throw DataError("seed must be an unsigned integer");
  }
  else if (key == "mean_x1") c.mean_x1 = num();
  else if (key == "mean_x2") c.mean_x2 = num();
  else if (key == "std_x1") c.std_x1 = num();
  else if (key == "std_x2") c.std_x2 = num();
  else if (key == "corr_x1_x2") c.corr_x1_x2 = num();
  else if (key == "mean_p") c.mean_p = num();
  else if (key == "std_p") c.std_p = num();
  else if (key == "corr_x1_p") c.corr_x1_p = num();
  else if (key == "corr_x2_p") c.corr_x2_p = num();
  else if (key == "rate_x1") c.rate_x1 = num();
  else if (key == "rate_both") c.rate_both = num();
  else if (key == "rate_x2") c.rate_x2 = num();
  else if (key == "rounds") c.rounds = count();
  else if (key == "mcmc_iterations") c.mcmc_iterations = count();
  else if (key == "threads") c.threads = count();
  else if (key == "methods") {
    c.methods.clear();
    std::size_t start = 0;
    while (start <= value.size()) {
      auto end = value.find(',', start);
      if (end == std::string::npos) end = value.size();
      std::string m = value.substr(start, end - start);
      m.erase(0, m.find_first_not_of(" \t"));
      m.erase(m.find_last_not_of(" \t") + 1);
      if (!m.empty()) c.methods.push_back(m);
      start = end + 1;
    }
  } else {
    throw DataError("unknown study option '" + key + "'");
  }
}

inline std::string study_edit_rules(const StudyConfig& c) {
  if (c.profile == Profile::Income)
    return "x1 + x2 = P\nx1 >= x2\nP >= 3*x2\nx1 >= 0\nx2 >= 0\nP >= 0\n";
  return "x1 >= 0\nx2 >= 0\nP >= 0\n";
}

struct Population {
  DataMatrix data;
  EditSystem edits;
  Totals totals;
  /// Share of proposals rejected by the edits.
  double rejection_rate = 0.0;
};

namespace detail {

struct BivariateParams {
  double m1, m2, s1, s2, rho;
};

inline std::pair<double, double> bivariate(const BivariateParams& p, double z1, double z2) {
  return {p.m1 + p.s1 * z1, p.m2 + p.s2 * (p.rho * z1 + std::sqrt(1.0 - p.rho * p.rho) * z2)};
}

inline bool income_ok(double x1, double x2) { return x2 >= 0.0 && x1 >= 2.0 * x2; }

/// Normal parameters whose restriction to the income edits has the target
/// moments; found by a few fixed-point passes over common random numbers.
inline BivariateParams calibrate_income(const StudyConfig& c) {
  Rng rng = make_stream(c.seed, {hash_tag("pilot")});
  std::vector<std::pair<double, double>> z(200000);
  for (auto& p : z) p = {standard_normal(rng), standard_normal(rng)};
  BivariateParams p{c.mean_x1, c.mean_x2, c.std_x1, c.std_x2, c.corr_x1_x2};
  for (int pass = 0; pass < 12; ++pass) {
    double n = 0, a1 = 0, a2 = 0, a11 = 0, a22 = 0, a12 = 0;
    for (const auto& [z1, z2] : z) {
      auto [x1, x2] = bivariate(p, z1, z2);
      if (!income_ok(x1, x2)) continue;
      n += 1;
      a1 += x1;
      a2 += x2;
      a11 += x1 * x1;
      a22 += x2 * x2;
      a12 += x1 * x2;
    }
    if (n < 0.01 * static_cast<double>(z.size()))
      throw DataError("target moments are incompatible with the edits (over 99% of draws rejected)");
    const double m1 = a1 / n, m2 = a2 / n;
    const double v1 = a11 / n - m1 * m1, v2 = a22 / n - m2 * m2;
    const double r = (a12 / n - m1 * m2) / std::sqrt(v1 * v2);
    p.m1 += c.mean_x1 - m1;
    p.m2 += c.mean_x2 - m2;
    p.s1 *= c.std_x1 / std::sqrt(v1);
    p.s2 *= c.std_x2 / std::sqrt(v2);
    p.rho = std::clamp(p.rho + (c.corr_x1_x2 - r), -0.999, 0.999);
  }
  return p;
}

} // namespace detail

/// Complete synthetic population satisfying the profile's edits. Proposals
/// violating an edit are redrawn.
inline Population generate_population(const StudyConfig& c, Rng& rng) {
  Population pop;
  pop.edits = parse_edit_rules(study_edit_rules(c));
  // proposals are screened by the parsed inequalities themselves, so the
  // accepted rows pass them with no tolerance at all
  const auto passes = [&](double x1, double x2, double p) {
    const Assignment row{{"x1", x1}, {"x2", x2}, {"P", p}};
    for (const auto& e : pop.edits.edits())
      if (!e.is_equality() && e.evaluate(row) < 0.0) return false;
    return true;
  };
  pop.data = DataMatrix({"x1", "x2", "P"}, c.population_size);
  std::size_t proposals = 0;
  const std::size_t cap = 100;  // proposals per accepted row before giving up

  if (c.profile == Profile::Income) {
    const auto p = detail::calibrate_income(c);
    for (std::size_t i = 0; i < c.population_size; ++i) {
      for (std::size_t tries = 0;; ++tries) {
        if (tries == cap) throw DataError("target moments are incompatible with the edits (over 99% of draws rejected)");
        ++proposals;
        const double z1 = standard_normal(rng), z2 = standard_normal(rng);
        auto [x1, x2] = detail::bivariate(p, z1, z2);
        if (!detail::income_ok(x1, x2) || !passes(x1, x2, x1 + x2)) continue;
        pop.data(i, 0) = x1;
        pop.data(i, 1) = x2;
        pop.data(i, 2) = x1 + x2;
        break;
      }
    }
  } else {
    Eigen::Matrix3d corr;
    corr << 1.0, c.corr_x1_x2, c.corr_x1_p, c.corr_x1_x2, 1.0, c.corr_x2_p, c.corr_x1_p, c.corr_x2_p, 1.0;
    Eigen::LLT<Eigen::Matrix3d> llt(corr);
    if (llt.info() != Eigen::Success) throw DataError("target correlation matrix is not positive definite");
    const Eigen::Matrix3d l = llt.matrixL();
    const Eigen::Vector3d mu(c.mean_x1, c.mean_x2, c.mean_p), sd(c.std_x1, c.std_x2, c.std_p);
    for (std::size_t i = 0; i < c.population_size; ++i) {
      for (std::size_t tries = 0;; ++tries) {
        if (tries == cap) throw DataError("target moments are incompatible with the edits (over 99% of draws rejected)");
        ++proposals;
        Eigen::Vector3d z(standard_normal(rng), standard_normal(rng), standard_normal(rng));
        Eigen::Vector3d x = mu + sd.cwiseProduct(l * z);
        if ((x.array() < 0.0).any() || !passes(x(0), x(1), x(2))) continue;
        for (int j = 0; j < 3; ++j) pop.data(i, static_cast<std::size_t>(j)) = x(j);
        break;
      }
    }
  }
  pop.rejection_rate = 1.0 - static_cast<double>(c.population_size) / static_cast<double>(std::max<std::size_t>(1, proposals));
  for (std::size_t j = 0; j < 3; ++j) pop.totals[pop.data.columns()[j]] = pop.data.weighted_sum(j);
  return pop;
}

namespace detail {

inline std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
  return idx;
}

} // namespace detail

/// floor(rate_x1 r) rows lose x1, floor(rate_both) of those also lose x2,
/// and floor(rate_x2 (r - n1)) of the untouched rows lose x2.
inline Mask apply_mcar(const DataMatrix& data, const StudyConfig& c, Rng& rng) {
  const std::size_t r = data.rows();
  const std::size_t j1 = data.column("x1"), j2 = data.column("x2");
  Mask mask(r, data.cols());
  const auto perm = detail::permutation(r, rng);
  const auto n1 = static_cast<std::size_t>(std::floor(c.rate_x1 * static_cast<double>(r)));
  const auto nb = static_cast<std::size_t>(std::floor(c.rate_both * static_cast<double>(n1)));
  const auto n2 = static_cast<std::size_t>(std::floor(c.rate_x2 * static_cast<double>(r - n1)));
  for (std::size_t k = 0; k < n1; ++k) mask.set(perm[k], j1);
  for (std::size_t k = 0; k < nb; ++k) mask.set(perm[k], j2);
  for (std::size_t k = n1; k < n1 + n2; ++k) mask.set(perm[k], j2);
  return mask;
}

/// Simple random sample without replacement, rows kept in population order.
inline DataMatrix draw_sample(const DataMatrix& pop, std::size_t s, Rng& rng) {
  auto perm = detail::permutation(pop.rows(), rng);
  perm.resize(s);
  std::sort(perm.begin(), perm.end());
  DataMatrix out(pop.columns(), s);
  for (std::size_t k = 0; k < s; ++k)
    for (std::size_t j = 0; j < pop.cols(); ++j) out(k, j) = pop(perm[k], j);
  return out;
}

/// Monte Carlo averages for one method (or the original sample).
struct MethodSummary {
  std::string method;
  std::map<std::string, double> mean, std;
  std::map<std::string, double> d_l1, ks, std_pct_diff;
  std::map<std::pair<std::string, std::string>, double> correlations;
  /// Worst relative total error over replications (benchmarked methods).
  double max_total_error = 0.0;
  /// Records failing an edit, summed over replications.
  std::size_t edit_violations = 0;
};

struct StudyReport {
  StudyConfig config;
  std::map<std::string, double> population_mean, population_std;
  std::map<std::pair<std::string, std::string>, double> population_correlations;
  double rejection_rate = 0.0;
  /// "original" first, then the configured methods in order.
  std::vector<MethodSummary> methods;
};

namespace detail {

inline MethodSummary summarize(const std::string& method, const DataMatrix& truth, const DataMatrix& imputed,
                               const Mask& mask, const EditSystem& edits, const Totals& totals) {
  MethodSummary ms;
  ms.method = method;
  const auto rep = evaluate_imputation(truth, imputed, mask);
  for (const auto& [name, vm] : rep.variables) {
    if (name == "P") continue;
    ms.mean[name] = vm.mean;
    ms.std[name] = vm.std;
    ms.d_l1[name] = vm.d_l1;
    ms.ks[name] = vm.ks;
    ms.std_pct_diff[name] = vm.std_pct_diff;
  }
  ms.correlations = rep.correlations;
  ms.max_total_error = max_total_error(imputed, totals);
  ms.edit_violations = edit_violations(imputed, edits).size();
  return ms;
}

inline void accumulate(MethodSummary& into, const MethodSummary& add, double scale) {
  auto acc = [scale](std::map<std::string, double>& a, const std::map<std::string, double>& b) {
    for (const auto& [k, v] : b) a[k] += scale * v;
  };
  acc(into.mean, add.mean);
  acc(into.std, add.std);
  acc(into.d_l1, add.d_l1);
  acc(into.ks, add.ks);
  acc(into.std_pct_diff, add.std_pct_diff);
  for (const auto& [k, v] : add.correlations) into.correlations[k] += scale * v;
  into.max_total_error = std::max(into.max_total_error, add.max_total_error);
  into.edit_violations += add.edit_violations;
}

} // namespace detail

/// One replication: sample, mask, impute with every method, evaluate.
inline std::vector<MethodSummary> run_replication(const StudyConfig& c, const Population& pop, std::size_t rep) {
  Rng rng = make_stream(c.seed, {hash_tag("replication"), rep});
  const DataMatrix truth = draw_sample(pop.data, c.sample_size, rng);
  const Mask mask = apply_mcar(truth, c, rng);
  const DataMatrix masked = mask.apply(truth);
  Totals totals;
  for (std::size_t j = 0; j < truth.cols(); ++j) totals[truth.columns()[j]] = truth.weighted_sum(j);

  std::vector<MethodSummary> out;
  out.push_back(detail::summarize("original", truth, truth, mask, pop.edits, totals));

  ImputationConfig ic;
  ic.rounds = c.rounds;
  ic.variable_order = {"x1", "x2"};
  ic.seed = derive_seed(c.seed, {hash_tag("bpmr"), rep});
  std::optional<ImputationResult> bpma;
  auto run = [&](Method m) {
    ic.method = m;
    return impute(masked, pop.edits, totals, ic);
  };
  for (const auto& name : c.methods) {
    if (name == "mcmc") {
      if (!bpma) bpma = run(Method::BPMA);
      McmcConfig mc;
      if (c.mcmc_iterations > 0) mc.iterations = c.mcmc_iterations;
      mc.seed = derive_seed(c.seed, {hash_tag("mcmc"), rep});
      auto refined = mcmc_refine(bpma->data, mask, pop.edits, totals, mc);
      out.push_back(detail::summarize(name, truth, refined.data, mask, pop.edits, totals));
      continue;
    }
    const Method m = parse_method(name);
    auto res = run(m);
    if (m == Method::BPMA) bpma = res;
    out.push_back(detail::summarize(name, truth, res.data, mask, pop.edits, totals));
  }
  return out;
}

/// Replicated study; replications run on independent streams in parallel
/// and are reduced in replication order.
inline StudyReport run_study(const StudyConfig& c) {
  c.validate();
  StudyReport report;
  report.config = c;
  Rng prng = make_stream(c.seed, {hash_tag("population")});
  const Population pop = generate_population(c, prng);
  report.rejection_rate = pop.rejection_rate;
  {
    const auto rep = evaluate_imputation(pop.data, pop.data, Mask(pop.data.rows(), pop.data.cols()));
    for (const auto& [name, vm] : rep.variables) {
      report.population_mean[name] = vm.mean;
      report.population_std[name] = vm.std;
    }
    report.population_correlations = rep.correlations;
  }

  std::vector<std::vector<MethodSummary>> per_rep(c.replications);
  std::vector<std::exception_ptr> errors(c.replications);
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(c.threads ? c.threads : std::thread::hardware_concurrency(),
                                                     c.replications));
  {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t r = w; r < c.replications; r += workers) {
          try {
            per_rep[r] = run_replication(c, pop, r);
          } catch (...) {
            errors[r] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (std::size_t r = 0; r < c.replications; ++r) {
    if (!errors[r]) continue;
    try {
      std::rethrow_exception(errors[r]);
    } catch (const InfeasibleError& e) {
      throw InfeasibleError("replication " + std::to_string(r) + ": " + e.what(), e.witness());
    } catch (const UsageError&) {
      throw;
    } catch (const DataError& e) {
      throw DataError("replication " + std::to_string(r) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("replication " + std::to_string(r) + ": " + e.what());
    }
  }
  const double scale = 1.0 / static_cast<double>(c.replications);
  for (std::size_t k = 0; k < per_rep.front().size(); ++k) {
    MethodSummary avg;
    avg.method = per_rep.front()[k].method;
    for (std::size_t r = 0; r < c.replications; ++r) detail::accumulate(avg, per_rep[r][k], scale);
    report.methods.push_back(std::move(avg));
  }
  return report;
}

} // namespace calimpute

#endif // CALIMPUTE_SIM_HPP
