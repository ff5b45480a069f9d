#ifndef CALIMPUTE_IO_HPP
#define CALIMPUTE_IO_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

#include "calimpute/data.hpp"
#include "calimpute/error.hpp"
#include "calimpute/mcmc.hpp"
#include "calimpute/metrics.hpp"
#include "calimpute/pipeline.hpp"
#include "calimpute/sim.hpp"

namespace calimpute {

inline constexpr std::string_view kWeightColumn = "__weight";

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw DataError("error while writing '" + path + "'");
}

/// 17 significant digits, enough to reproduce any double exactly.
inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = text.substr(0, nl);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return lines;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  for (;;) {
    auto c = line.find(',');
    out.push_back(trim(line.substr(0, c)));
    if (c == std::string_view::npos) break;
    line.remove_prefix(c + 1);
  }
  return out;
}

inline bool blank(std::string_view line) { return trim(line).empty(); }

inline double parse_real(std::string_view s, std::size_t line, std::size_t column) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if (!s.empty() && *b == '+') ++b;
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || !std::isfinite(v))
    throw ParseError("'" + std::string(s) + "' is not a finite number", line, column);
  return v;
}

} // namespace detail

/// Comma-separated table with a header row; empty fields and `NA` are
/// missing; an optional `__weight` column holds the unit weights.
inline DataMatrix parse_dataset(std::string_view text) {
  const auto lines = detail::split_lines(text);
  std::size_t ln = 0;
  while (ln < lines.size() && detail::blank(lines[ln])) ++ln;
  if (ln == lines.size()) throw DataError("no header row");
  const auto header = detail::split_fields(lines[ln]);
  const std::size_t header_line = ln + 1;
  std::vector<std::string> columns;
  std::optional<std::size_t> wcol;
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k].empty()) throw ParseError("empty column name", header_line, k + 1);
    if (header[k] == kWeightColumn) {
      if (wcol) throw ParseError("duplicate column '__weight'", header_line, k + 1);
      wcol = k;
      continue;
    }
    for (const auto& c : columns)
      if (c == header[k]) throw ParseError("duplicate column '" + c + "'", header_line, k + 1);
    columns.emplace_back(header[k]);
  }

  std::vector<std::vector<double>> rows;
  std::vector<double> weights;
  for (++ln; ln < lines.size(); ++ln) {
    if (detail::blank(lines[ln])) continue;
    const auto f = detail::split_fields(lines[ln]);
    if (f.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " + std::to_string(f.size()), ln + 1,
                       1);
    std::vector<double> row;
    double w = 1.0;
    for (std::size_t k = 0; k < f.size(); ++k) {
      const bool na = f[k].empty() || f[k] == "NA";
      if (wcol && k == *wcol) {
        if (na) throw ParseError("missing weight", ln + 1, k + 1);
        w = detail::parse_real(f[k], ln + 1, k + 1);
        if (!(w > 0.0)) throw ParseError("weights must be positive", ln + 1, k + 1);
        continue;
      }
      row.push_back(na ? kMissing : detail::parse_real(f[k], ln + 1, k + 1));
    }
    rows.push_back(std::move(row));
    weights.push_back(w);
  }
  if (rows.empty()) throw DataError("no records");
  DataMatrix d(columns, rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < columns.size(); ++j) d(i, j) = rows[i][j];
  d.set_weights(std::move(weights));
  return d;
}

inline DataMatrix read_dataset(const std::string& path) {
  try {
    return parse_dataset(read_text_file(path));
  } catch (const ParseError& e) {
    throw DataError(path + ": " + e.what());
  }
}

/// Inverse of parse_dataset; writes `__weight` only for non-unit weights.
inline std::string format_dataset(const DataMatrix& d) {
  std::string out;
  const bool with_w = !d.unit_weights();
  for (std::size_t j = 0; j < d.cols(); ++j) {
    if (j) out += ',';
    out += d.columns()[j];
  }
  if (with_w) out += std::string(d.cols() ? "," : "") + std::string(kWeightColumn);
  out += '\n';
  for (std::size_t i = 0; i < d.rows(); ++i) {
    for (std::size_t j = 0; j < d.cols(); ++j) {
      if (j) out += ',';
      out += d.missing(i, j) ? std::string("NA") : format_real(d(i, j));
    }
    if (with_w) out += (d.cols() ? "," : "") + format_real(d.weight(i));
    out += '\n';
  }
  return out;
}

inline void write_dataset(const std::string& path, const DataMatrix& d) { write_text_file(path, format_dataset(d)); }

/// `name = value` (or `name: value`) lines with `#` comments.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto lines = detail::split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    auto line = lines[k];
    if (auto h = line.find('#'); h != std::string_view::npos) line = line.substr(0, h);
    if (detail::blank(line)) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) eq = line.find(':');
    if (eq == std::string_view::npos) throw ParseError("expected 'key = value'", k + 1, 1);
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("missing key", k + 1, 1);
    out.emplace_back(std::string(key), std::string(value));
  }
  return out;
}

inline Totals parse_totals(std::string_view text) {
  Totals t;
  std::size_t line = 0;
  for (const auto& [k, v] : parse_key_values(text)) {
    ++line;
    if (t.contains(k)) throw DataError("total for '" + k + "' given twice");
    t[k] = detail::parse_real(v, line, 1);
  }
  return t;
}

inline Totals read_totals(const std::string& path) {
  try {
    return parse_totals(read_text_file(path));
  } catch (const ParseError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline std::string format_totals(const Totals& t) {
  std::string out;
  for (const auto& [k, v] : t) out += k + " = " + format_real(v) + "\n";
  return out;
}

/// Mask files are CSV tables of 0/1 flags with the data's header.
inline Mask parse_mask(std::string_view text, const std::vector<std::string>& columns) {
  const DataMatrix m = parse_dataset(text);
  std::vector<std::size_t> pos;
  for (const auto& c : columns) pos.push_back(m.column(c));
  if (m.cols() != columns.size()) throw DataError("mask columns do not match the data columns");
  Mask out(m.rows(), columns.size());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const double v = m(i, pos[j]);
      if (v != 0.0 && v != 1.0) throw DataError("mask entries must be 0 or 1");
      out.set(i, j, v == 1.0);
    }
  return out;
}

inline std::string format_mask(const Mask& m, const std::vector<std::string>& columns) {
  std::string out;
  for (std::size_t j = 0; j < columns.size(); ++j) out += (j ? "," : "") + columns[j];
  out += '\n';
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out += (j ? "," : "") + std::string(m(i, j) ? "1" : "0");
    out += '\n';
  }
  return out;
}

inline StudyConfig parse_study_config(std::string_view text) {
  StudyConfig c;
  for (const auto& [k, v] : parse_key_values(text)) set_study_option(c, k, v);
  c.validate();
  return c;
}

namespace detail {

inline nlohmann::json real_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

} // namespace detail

inline std::string diagnostics_line(const StepDiagnostics& d) {
  nlohmann::ordered_json j;
  j["kind"] = "step";
  j["round"] = d.round;
  j["variable"] = d.variable;
  j["method"] = std::string(method_name(d.method));
  j["predictors"] = d.predictors;
  j["n_fit"] = d.n_fit;
  j["n_missing"] = d.n_missing;
  j["intercept"] = detail::real_json(d.intercept);
  j["missing_intercept"] = detail::real_json(d.missing_intercept);
  j["residual_variance"] = detail::real_json(d.residual_variance);
  j["intervals"] = {{"degenerate", d.degenerate},
                    {"bounded", d.bounded},
                    {"half_open", d.half_open},
                    {"unbounded", d.unbounded},
                    {"mean_width", detail::real_json(d.mean_width)}};
  j["adjustment_norm"] = detail::real_json(d.adjustment_norm);
  j["adjust_iterations"] = d.adjust_iterations;
  j["ar_attempts"] = d.ar_attempts;
  j["ar_fallbacks"] = d.ar_fallbacks;
  j["total_error"] = detail::real_json(d.total_error);
  return j.dump();
}

inline std::string checkpoint_line(const Checkpoint& cp) {
  nlohmann::ordered_json j;
  j["kind"] = "checkpoint";
  j["iteration"] = cp.iteration;
  j["edit_violations"] = cp.edit_violations;
  j["max_total_error"] = detail::real_json(cp.max_total_error);
  j["fallbacks"] = cp.fallbacks;
  nlohmann::ordered_json cols = nlohmann::ordered_json::object();
  for (const auto& [name, cs] : cp.columns)
    cols[name] = {{"mean", detail::real_json(cs.mean)},
                  {"std", detail::real_json(cs.std)},
                  {"ks_previous", detail::real_json(cs.ks_previous)}};
  j["columns"] = cols;
  return j.dump();
}

/// Rows of method,variable,metric,value.
inline std::string format_metric_report(const std::string& method, const MetricReport& r, bool header = true) {
  std::string out = header ? "method,variable,metric,value\n" : "";
  for (const auto& [name, vm] : r.variables) {
    const std::pair<const char*, double> rows[] = {{"mean", vm.mean},     {"std", vm.std},
                                                   {"d_l1", vm.d_l1},     {"ks", vm.ks},
                                                   {"std_pct_diff", vm.std_pct_diff}};
    out += method + "," + name + ",imputed," + std::to_string(vm.imputed) + "\n";
    for (const auto& [metric, v] : rows)
      out += method + "," + name + "," + metric + "," + (std::isfinite(v) ? format_real(v) : "NA") + "\n";
  }
  for (const auto& [pair, v] : r.correlations)
    out += method + "," + pair.first + ":" + pair.second + ",corr," + (std::isfinite(v) ? format_real(v) : "NA") + "\n";
  return out;
}

inline std::string format_study_report(const StudyReport& rep) {
  std::string out = "method,variable,metric,value\n";
  auto row = [&](const std::string& m, const std::string& v, const std::string& k, double x) {
    out += m + "," + v + "," + k + "," + (std::isfinite(x) ? format_real(x) : "NA") + "\n";
  };
  for (const auto& [k, v] : rep.population_mean) row("population", k, "mean", v);
  for (const auto& [k, v] : rep.population_std) row("population", k, "std", v);
  for (const auto& [k, v] : rep.population_correlations) row("population", k.first + ":" + k.second, "corr", v);
  for (const auto& ms : rep.methods) {
    for (const auto& [k, v] : ms.mean) row(ms.method, k, "mean", v);
    for (const auto& [k, v] : ms.std) row(ms.method, k, "std", v);
    for (const auto& [k, v] : ms.d_l1) row(ms.method, k, "d_l1", v);
    for (const auto& [k, v] : ms.ks) row(ms.method, k, "ks", v);
    for (const auto& [k, v] : ms.std_pct_diff) row(ms.method, k, "std_pct_diff", v);
    for (const auto& [k, v] : ms.correlations) row(ms.method, k.first + ":" + k.second, "corr", v);
    row(ms.method, "*", "max_total_error", ms.max_total_error);
    row(ms.method, "*", "edit_violations", static_cast<double>(ms.edit_violations));
  }
  return out;
}

/// Fixed-width summary in the shape of the usual means/STD/correlation and
/// metric tables.
inline std::string study_summary(const StudyReport& rep) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu replications, sample %zu of %zu\n\n", rep.config.replications,
                rep.config.sample_size, rep.config.population_size);
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %9s %9s %7s %7s %7s\n", "method", "mean x1", "std x1", "mean x2",
                "std x2", "x1,x2", "x1,P", "x2,P");
  out += buf;
  auto corr = [](const auto& m, const char* a, const char* b) {
    auto it = m.find({a, b});
    return it == m.end() ? std::nan("") : it->second;
  };
  std::snprintf(buf, sizeof buf, "%-10s %9.1f %9.1f %9.1f %9.1f %7.3f %7.3f %7.3f\n", "population",
                rep.population_mean.at("x1"), rep.population_std.at("x1"), rep.population_mean.at("x2"),
                rep.population_std.at("x2"), corr(rep.population_correlations, "x1", "x2"),
                corr(rep.population_correlations, "x1", "P"), corr(rep.population_correlations, "x2", "P"));
  out += buf;
  for (const auto& m : rep.methods) {
    std::snprintf(buf, sizeof buf, "%-10s %9.1f %9.1f %9.1f %9.1f %7.3f %7.3f %7.3f\n", m.method.c_str(),
                  m.mean.at("x1"), m.std.at("x1"), m.mean.at("x2"), m.std.at("x2"), corr(m.correlations, "x1", "x2"),
                  corr(m.correlations, "x1", "P"), corr(m.correlations, "x2", "P"));
    out += buf;
  }
  out += "\n";
  std::snprintf(buf, sizeof buf, "%-10s %9s %9s %9s %9s %9s %9s\n", "method", "dL1 x1", "KS x1", "%STD x1", "dL1 x2",
                "KS x2", "%STD x2");
  out += buf;
  for (const auto& m : rep.methods) {
    if (m.method == "original") continue;
    std::snprintf(buf, sizeof buf, "%-10s %9.1f %9.3f %9.2f %9.1f %9.3f %9.2f\n", m.method.c_str(), m.d_l1.at("x1"),
                  m.ks.at("x1"), m.std_pct_diff.at("x1"), m.d_l1.at("x2"), m.ks.at("x2"), m.std_pct_diff.at("x2"));
    out += buf;
  }
  return out;
}

} // namespace calimpute

#endif // CALIMPUTE_IO_HPP
