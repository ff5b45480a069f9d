#ifndef CALIMPUTE_CLI_HPP
#define CALIMPUTE_CLI_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <exception>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "calimpute/data.hpp"
#include "calimpute/edits.hpp"
#include "calimpute/error.hpp"
#include "calimpute/io.hpp"
#include "calimpute/mcmc.hpp"
#include "calimpute/metrics.hpp"
#include "calimpute/pipeline.hpp"
#include "calimpute/sim.hpp"

namespace calimpute {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInfeasible = 3 };

namespace detail {

struct SimulateArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

struct ImputeArgs {
  std::string data, edits, totals, method, out, diagnostics, mask;
  std::vector<std::string> order, log_columns;
  std::uint64_t seed = 0;
  std::size_t rounds = 2;
  std::optional<std::size_t> iterations;
};

struct EvaluateArgs {
  std::string truth, imputed, mask, out, method = "imputed", edits, totals;
};

struct StudyArgs {
  std::string config, out, summary;
  std::optional<std::uint64_t> seed;
};

inline void run_simulate(const SimulateArgs& a, std::ostream& out) {
  StudyConfig c = parse_study_config(read_text_file(a.config));
  if (a.seed) c.seed = *a.seed;
  std::filesystem::create_directories(a.out);
  const std::filesystem::path dir(a.out);
  Rng prng = make_stream(c.seed, {hash_tag("population")});
  const Population pop = generate_population(c, prng);
  Rng rng = make_stream(c.seed, {hash_tag("replication"), 0});
  const DataMatrix sample = draw_sample(pop.data, c.sample_size, rng);
  const Mask mask = apply_mcar(sample, c, rng);
  Totals totals;
  for (std::size_t j = 0; j < sample.cols(); ++j) totals[sample.columns()[j]] = sample.weighted_sum(j);
  write_dataset((dir / "population.csv").string(), pop.data);
  write_dataset((dir / "sample.csv").string(), sample);
  write_dataset((dir / "data.csv").string(), mask.apply(sample));
  write_text_file((dir / "mask.csv").string(), format_mask(mask, sample.columns()));
  write_text_file((dir / "totals.txt").string(), format_totals(totals));
  write_text_file((dir / "study.edits").string(), study_edit_rules(c));
  out << "wrote population (" << pop.data.rows() << " rows), sample (" << sample.rows() << " rows, " << mask.count()
      << " masked cells) to " << a.out << "\n";
}

inline void run_impute(const ImputeArgs& a, std::ostream& out, std::ostream& err) {
  const bool mcmc = a.method == "mcmc";
  const Method method = mcmc ? Method::BPMA : parse_method(a.method);
  if ((mcmc || benchmarked(method)) && a.totals.empty())
    throw UsageError("method " + a.method + " needs --totals");
  if (!a.mask.empty() && !mcmc) throw UsageError("--mask only applies to --method mcmc");

  const DataMatrix data = read_dataset(a.data);
  const EditSystem edits = parse_edit_rules(read_text_file(a.edits));
  std::optional<Totals> totals;
  if (!a.totals.empty()) totals = read_totals(a.totals);

  ImputationConfig cfg;
  cfg.method = method;
  cfg.rounds = a.rounds;
  cfg.seed = a.seed;
  cfg.variable_order = a.order;
  cfg.log_columns = a.log_columns;

  std::string diag;
  DataMatrix result = data;
  Mask mask = Mask::of(data);
  if (!mcmc || data.missing_count() > 0) {
    if (mcmc) {
      if (!a.mask.empty()) throw UsageError("--mask is for fully imputed input, but the data has missing cells");
      err << "input has missing cells; running bpma first to get a consistent starting point\n";
      diag += R"({"kind":"note","message":"bpma pre-imputation"})" "\n";
    }
    auto res = impute(data, edits, totals, cfg);
    for (const auto& d : res.diagnostics) diag += diagnostics_line(d) + "\n";
    result = std::move(res.data);
  } else if (!a.mask.empty()) {
    mask = parse_mask(read_text_file(a.mask), data.columns());
  } else {
    throw UsageError("--method mcmc on complete data needs --mask to know which cells were imputed");
  }
  if (mcmc) {
    McmcConfig mc;
    mc.seed = a.seed;
    mc.iterations = a.iterations;
    auto res = mcmc_refine(result, mask, edits, *totals, mc);
    for (const auto& cp : res.trace) diag += checkpoint_line(cp) + "\n";
    result = std::move(res.data);
  }
  write_dataset(a.out, result);
  write_text_file(a.diagnostics.empty() ? a.out + ".diagnostics.jsonl" : a.diagnostics, diag);
  out << "imputed " << mask.count() << " cells with " << a.method << "; wrote " << a.out << "\n";
}

inline void run_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const DataMatrix truth = read_dataset(a.truth);
  const DataMatrix imputed = read_dataset(a.imputed);
  if (truth.columns() != imputed.columns() || truth.rows() != imputed.rows())
    throw DataError("truth and imputed files differ in shape or columns");
  const Mask mask = parse_mask(read_text_file(a.mask), truth.columns());
  if (mask.rows() != truth.rows()) throw DataError("mask has a different number of rows");
  for (std::size_t i = 0; i < truth.rows(); ++i)
    for (std::size_t j = 0; j < truth.cols(); ++j) {
      if (imputed.missing(i, j))
        throw DataError("imputed file has a missing cell at row " + std::to_string(i + 1) + ", column '" +
                        truth.columns()[j] + "'");
      if (!mask(i, j) && imputed(i, j) != truth(i, j))
        throw DataError("observed cell changed at row " + std::to_string(i + 1) + ", column '" + truth.columns()[j] + "'");
    }
  if (!a.edits.empty()) {
    const EditSystem edits = parse_edit_rules(read_text_file(a.edits));
    if (auto bad = edit_violations(imputed, edits); !bad.empty())
      throw DataError("imputed record " + std::to_string(bad.front().first + 1) + " violates the edits");
  }
  if (!a.totals.empty()) {
    const Totals t = read_totals(a.totals);
    if (const double e = max_total_error(imputed, t); e > 1e-8)
      throw DataError("imputed columns miss their totals by a relative " + format_real(e));
  }
  const auto report = evaluate_imputation(truth, imputed, mask);
  write_text_file(a.out, format_metric_report(a.method, report));
  out << "wrote metrics for " << report.variables.size() << " columns to " << a.out << "\n";
}

inline void run_study_command(const StudyArgs& a, std::ostream& out) {
  StudyConfig c = parse_study_config(read_text_file(a.config));
  if (a.seed) c.seed = *a.seed;
  const auto rep = run_study(c);
  write_text_file(a.out, format_study_report(rep));
  const auto summary = study_summary(rep);
  if (!a.summary.empty()) write_text_file(a.summary, summary);
  out << summary;
}

} // namespace detail

/// Entry point of the command-line tool. Returns 0 on success, 1 on usage
/// errors, 2 on data errors and 3 when the constraints are infeasible.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Imputation under linear edit rules and known column totals"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "calimpute 0.1.0");

  detail::SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic population, one masked sample and its totals");
  simulate->add_option("--config", sim.config, "Study configuration (key = value)")->required()->check(CLI::ExistingFile);
  simulate->add_option("--out", sim.out, "Output directory")->required();
  simulate->add_option("--seed", sim.seed, "Override the configured seed");

  detail::ImputeArgs imp;
  auto* impute_cmd = app.add_subcommand("impute", "Impute missing cells subject to edits and totals");
  impute_cmd->add_option("--data", imp.data, "Dataset (CSV, NA = missing)")->required()->check(CLI::ExistingFile);
  impute_cmd->add_option("--edits", imp.edits, "Edit rules")->required()->check(CLI::ExistingFile);
  impute_cmd->add_option("--totals", imp.totals, "Known totals (column = value)")->check(CLI::ExistingFile);
  impute_cmd->add_option("--method", imp.method, "upma | bpma | bpmr | mcmc")
      ->required()
      ->check(CLI::IsMember({"upma", "bpma", "bpmr", "mcmc"}, CLI::ignore_case));
  impute_cmd->add_option("--seed", imp.seed, "Random seed")->capture_default_str();
  impute_cmd->add_option("--rounds", imp.rounds, "Passes over the variables")->capture_default_str()->check(CLI::PositiveNumber);
  impute_cmd->add_option("--out", imp.out, "Imputed dataset")->required();
  impute_cmd->add_option("--diagnostics", imp.diagnostics, "Diagnostics (JSON lines); default <out>.diagnostics.jsonl");
  impute_cmd->add_option("--order", imp.order, "Variable order")->delimiter(',');
  impute_cmd->add_option("--log", imp.log_columns, "Columns modelled on log scale")->delimiter(',');
  impute_cmd->add_option("--iterations", imp.iterations, "Pair steps for mcmc (default 20 per imputed cell)");
  impute_cmd->add_option("--mask", imp.mask, "Imputed-cell mask for mcmc on complete data")->check(CLI::ExistingFile);

  detail::EvaluateArgs ev;
  auto* evaluate = app.add_subcommand("evaluate", "Compare an imputed dataset with the truth");
  evaluate->add_option("--truth", ev.truth, "Complete dataset")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--imputed", ev.imputed, "Imputed dataset")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--mask", ev.mask, "Imputed-cell mask")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out", ev.out, "Metric table (CSV)")->required();
  evaluate->add_option("--method", ev.method, "Label for the method column")->capture_default_str();
  evaluate->add_option("--edits", ev.edits, "Also require the edits to hold")->check(CLI::ExistingFile);
  evaluate->add_option("--totals", ev.totals, "Also require the totals to hold")->check(CLI::ExistingFile);

  detail::StudyArgs st;
  auto* study = app.add_subcommand("study", "Run the replicated simulation study");
  study->add_option("--config", st.config, "Study configuration (key = value)")->required()->check(CLI::ExistingFile);
  study->add_option("--out", st.out, "Report table (CSV)")->required();
  study->add_option("--summary", st.summary, "Also write the text summary here");
  study->add_option("--seed", st.seed, "Override the configured seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << app.version() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*simulate) detail::run_simulate(sim, out);
    if (*impute_cmd) {
      for (auto& c : imp.method) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      detail::run_impute(imp, out, err);
    }
    if (*evaluate) detail::run_evaluate(ev, out);
    if (*study) detail::run_study_command(st, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InfeasibleError& e) {
    err << "infeasible: " << e.what() << "\n";
    return kExitInfeasible;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitOk;
}

} // namespace calimpute

#endif // CALIMPUTE_CLI_HPP
