#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "calimpute/pipeline.hpp"
#include "checks.hpp"

using namespace calimpute;

namespace {

/// Complete records under the three-variable edits, x3 = x1 + x2.
DataMatrix three_variable_data(std::size_t rows, std::uint64_t seed) {
  DataMatrix d({"x1", "x2", "x3"}, rows);
  Rng rng(seed);
  for (std::size_t i = 0; i < rows; ++i) {
    const double x1 = 10.0 + 40.0 * uniform01(rng);
    const double x2 = x1 / 2.0 * uniform01(rng);
    d(i, 0) = x1;
    d(i, 1) = x2;
    d(i, 2) = x1 + x2;
  }
  return d;
}

Totals totals_of(const DataMatrix& d) {
  Totals t;
  for (std::size_t j = 0; j < d.cols(); ++j) t[d.columns()[j]] = d.weighted_sum(j);
  return t;
}

void require_consistent(const DataMatrix& out, const DataMatrix& in, const EditSystem& edits) {
  REQUIRE(out.missing_count() == 0);
  for (std::size_t i = 0; i < in.rows(); ++i)
    for (std::size_t j = 0; j < in.cols(); ++j)
      if (!in.missing(i, j)) REQUIRE(out(i, j) == in(i, j));
  REQUIRE(edit_violations(out, edits, 1e-9).empty());
}

}  // namespace

TEST_CASE("variable order", "[pipeline]") {
  DataMatrix d({"x1", "x2", "x3"}, 20);
  for (std::size_t i = 0; i < 20; ++i)
    for (std::size_t j = 0; j < 3; ++j) d(i, j) = 1.0;
  for (std::size_t i = 0; i < 9; ++i) d.set_missing(i, 1);
  for (std::size_t i = 0; i < 5; ++i) d.set_missing(i + 10, 0);
  ImputationConfig cfg;
  CHECK(variable_order(d, cfg) == std::vector<std::string>{"x1", "x2"});
  cfg.variable_order = {"x2", "x1"};
  CHECK(variable_order(d, cfg) == std::vector<std::string>{"x2", "x1"});
  cfg.variable_order = {"x2"};
  CHECK_THROWS_AS(variable_order(d, cfg), UsageError);
  cfg.variable_order = {"x2", "x1", "x2"};
  CHECK_THROWS_AS(variable_order(d, cfg), UsageError);
  CHECK(variable_order(three_variable_data(5, 1), ImputationConfig{}).empty());
}

TEST_CASE("complete data is returned unchanged", "[pipeline]") {
  const auto d = three_variable_data(30, 2);
  const auto edits = parse_edit_rules(checks::kThreeVariableEdits);
  for (auto m : {Method::UPMA, Method::BPMA, Method::BPMR}) {
    auto res = impute(d, edits, totals_of(d), ImputationConfig{.method = m});
    CHECK(res.data == d);
    CHECK(res.diagnostics.empty());
  }
}

TEST_CASE("the three-variable record gets x3 in [10, 15] and x2 = x3 - 10", "[pipeline]") {
  auto d = three_variable_data(40, 3);
  d(0, 0) = 10.0;
  d.set_missing(0, 1);
  d.set_missing(0, 2);
  const auto edits = parse_edit_rules(checks::kThreeVariableEdits);
  auto res = impute(d, edits, std::nullopt, ImputationConfig{.method = Method::UPMA});
  const double x2 = res.data(0, 1), x3 = res.data(0, 2);
  CHECK(x3 >= 10.0);
  CHECK(x3 <= 15.0);
  CHECK(x2 == Catch::Approx(x3 - 10.0).margin(1e-12));
  require_consistent(res.data, d, edits);
}

TEST_CASE("benchmarked runs need totals for every imputed column", "[pipeline]") {
  auto d = three_variable_data(30, 4);
  d.set_missing(3, 1);
  const auto edits = parse_edit_rules(checks::kThreeVariableEdits);
  CHECK_THROWS_AS(impute(d, edits, std::nullopt, ImputationConfig{.method = Method::BPMA}), UsageError);
  CHECK_THROWS_AS(impute(d, edits, Totals{{"x1", 1.0}}, ImputationConfig{.method = Method::BPMR}), UsageError);
  CHECK_THROWS_AS(impute(d, edits, totals_of(d), ImputationConfig{.method = Method::BPMA, .rounds = 0}), UsageError);
  CHECK_THROWS_AS(impute(d, parse_edit_rules("x1 >= y"), totals_of(d), ImputationConfig{}), DataError);
}

TEST_CASE("an observed record that breaks an edit is rejected", "[pipeline]") {
  auto d = three_variable_data(30, 5);
  d(4, 2) += 1.0;
  d.set_missing(7, 1);
  CHECK_THROWS_AS(impute(d, parse_edit_rules(checks::kThreeVariableEdits), totals_of(three_variable_data(30, 5)),
                         ImputationConfig{}),
                  InfeasibleError);
}

TEST_CASE("benchmarked methods hit the totals on the three-variable data", "[pipeline]") {
  const auto truth = three_variable_data(300, 6);
  auto d = truth;
  Rng rng(60);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const double u = uniform01(rng);
    if (u < 0.1) d.set_missing(i, 0);
    else if (u < 0.2) d.set_missing(i, 1);
    else if (u < 0.25) {
      d.set_missing(i, 1);
      d.set_missing(i, 2);
    }
  }
  const auto edits = parse_edit_rules(checks::kThreeVariableEdits);
  const auto totals = totals_of(truth);
  for (auto m : {Method::BPMA, Method::BPMR}) {
    auto res = impute(d, edits, totals, ImputationConfig{.method = m, .seed = 8});
    require_consistent(res.data, d, edits);
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(std::abs(res.data.weighted_sum(j) - truth.weighted_sum(j)) <= 1e-8 * truth.weighted_sum(j));
    CHECK(res.diagnostics.size() == 2 * 3);
  }
}

TEST_CASE("design weights enter the totals", "[pipeline]") {
  auto truth = three_variable_data(200, 7);
  std::vector<double> w(truth.rows());
  Rng rng(70);
  for (auto& v : w) v = 1.0 + 9.0 * uniform01(rng);
  truth.set_weights(w);
  auto d = truth;
  for (std::size_t i = 0; i < d.rows(); i += 6) d.set_missing(i, 1);
  const auto edits = parse_edit_rules(checks::kThreeVariableEdits);
  auto res = impute(d, edits, totals_of(truth), ImputationConfig{.method = Method::BPMA});
  require_consistent(res.data, d, edits);
  CHECK(std::abs(res.data.weighted_sum(1) - truth.weighted_sum(1)) <= 1e-8 * truth.weighted_sum(1));
}

TEST_CASE("log-scale columns are calibrated on the original scale", "[pipeline]") {
  DataMatrix truth({"y", "x"}, 200);
  Rng rng(80);
  for (std::size_t i = 0; i < truth.rows(); ++i) {
    const double x = 1.0 + 20.0 * uniform01(rng);
    truth(i, 1) = x;
    truth(i, 0) = 3.0 * std::pow(x, 0.8) * std::exp(0.2 * standard_normal(rng));
  }
  auto d = truth;
  for (std::size_t i = 0; i < d.rows(); i += 5) d.set_missing(i, 0);
  const auto edits = parse_edit_rules("y >= 0\nx >= 0");
  ImputationConfig cfg{.method = Method::BPMA, .log_columns = {"y", "x"}};
  auto res = impute(d, edits, totals_of(truth), cfg);
  require_consistent(res.data, d, edits);
  CHECK(std::abs(res.data.weighted_sum(0) - truth.weighted_sum(0)) <= 1e-8 * truth.weighted_sum(0));

  auto bad = d;
  bad(1, 1) = 0.0;
  CHECK_THROWS_AS(impute(bad, edits, totals_of(truth), cfg), DataError);
}

TEST_CASE("UPMA and BPMA are deterministic, BPMR given its seed", "[pipeline]") {
  std::mt19937_64 gen(90);
  auto inst = oracle::random_instance(gen, 200);
  for (auto m : {Method::UPMA, Method::BPMA, Method::BPMR}) {
    ImputationConfig cfg{.method = m, .seed = 5};
    std::optional<ImputationResult> a, b;
    try {
      a = impute(inst.masked, inst.edits, inst.totals, cfg);
      b = impute(inst.masked, inst.edits, inst.totals, cfg);
    } catch (const InfeasibleError&) {
      continue;
    }
    CHECK(a->data == b->data);
  }
}

TEST_CASE("completed runs are exact, stopped runs name round and variable", "[pipeline][property]") {
  std::mt19937_64 gen(91);
  std::size_t completed = 0;
  for (int k = 0; k < 60; ++k) {
    auto inst = oracle::random_instance(gen, 200);
    for (auto m : {Method::UPMA, Method::BPMA, Method::BPMR}) {
      ImputationResult res;
      try {
        res = impute(inst.masked, inst.edits, m == Method::UPMA ? std::nullopt : std::optional<Totals>(inst.totals),
                     ImputationConfig{.method = m, .seed = static_cast<std::uint64_t>(k)});
      } catch (const InfeasibleError& e) {
        // without totals nothing couples the records, so clipping always succeeds
        REQUIRE(m != Method::UPMA);
        const std::string what = e.what();
        REQUIRE(what.find("round ") == 0);
        REQUIRE(what.find("variable '") != std::string::npos);
        continue;
      }
      ++completed;
      require_consistent(res.data, inst.masked, inst.edits);
      if (m == Method::UPMA) continue;
      for (const auto& [name, total] : inst.totals) {
        const double s = res.data.weighted_sum(res.data.column(name));
        REQUIRE(std::abs(s - total) <= 1e-8 * std::max(1.0, std::abs(total)));
      }
    }
  }
  CHECK(completed >= 150);
}
