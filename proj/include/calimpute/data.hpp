#ifndef CALIMPUTE_DATA_HPP
#define CALIMPUTE_DATA_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "calimpute/edits.hpp"
#include "calimpute/error.hpp"

namespace calimpute {

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// r x n numeric table; a cell is missing exactly when it holds NaN.
class DataMatrix {
public:
  DataMatrix() = default;
  DataMatrix(std::vector<std::string> columns, std::size_t rows)
      : columns_(std::move(columns)), values_(rows * columns_.size(), kMissing), weights_(rows, 1.0) {
    for (std::size_t a = 0; a < columns_.size(); ++a)
      for (std::size_t b = a + 1; b < columns_.size(); ++b)
        if (columns_[a] == columns_[b]) throw DataError("duplicate column name '" + columns_[a] + "'");
  }

  std::size_t rows() const noexcept { return weights_.size(); }
  std::size_t cols() const noexcept { return columns_.size(); }
  const std::vector<std::string>& columns() const noexcept { return columns_; }

  double& operator()(std::size_t i, std::size_t j) { return values_[i * cols() + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values_[i * cols() + j]; }
  bool missing(std::size_t i, std::size_t j) const { return std::isnan((*this)(i, j)); }
  void set_missing(std::size_t i, std::size_t j) { (*this)(i, j) = kMissing; }

  std::optional<std::size_t> find_column(std::string_view name) const {
    for (std::size_t j = 0; j < columns_.size(); ++j)
      if (columns_[j] == name) return j;
    return std::nullopt;
  }
  std::size_t column(std::string_view name) const {
    if (auto j = find_column(name)) return *j;
    throw DataError("unknown column '" + std::string(name) + "'");
  }

  const std::vector<double>& weights() const noexcept { return weights_; }
  double weight(std::size_t i) const { return weights_[i]; }
  void set_weights(std::vector<double> w) {
    if (w.size() != rows()) throw DataError("weights length does not match the number of rows");
    for (double v : w)
      if (!(v > 0.0) || !std::isfinite(v)) throw DataError("weights must be positive and finite");
    weights_ = std::move(w);
  }
  bool unit_weights() const {
    for (double v : weights_)
      if (v != 1.0) return false;
    return true;
  }

  std::vector<double> column_values(std::size_t j) const {
    std::vector<double> out(rows());
    for (std::size_t i = 0; i < rows(); ++i) out[i] = (*this)(i, j);
    return out;
  }

  std::size_t missing_count(std::size_t j) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows(); ++i) n += missing(i, j) ? 1 : 0;
    return n;
  }
  std::size_t missing_count() const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < cols(); ++j) n += missing_count(j);
    return n;
  }

  /// Non-missing cells of row i keyed by column name.
  Assignment known(std::size_t i) const {
    Assignment a;
    for (std::size_t j = 0; j < cols(); ++j)
      if (!missing(i, j)) a.emplace(columns_[j], (*this)(i, j));
    return a;
  }

  /// Weighted column sum over non-missing cells.
  double weighted_sum(std::size_t j) const {
    double s = 0.0;
    for (std::size_t i = 0; i < rows(); ++i)
      if (!missing(i, j)) s += weights_[i] * (*this)(i, j);
    return s;
  }

  bool operator==(const DataMatrix& o) const {
    if (columns_ != o.columns_ || weights_ != o.weights_ || values_.size() != o.values_.size()) return false;
    for (std::size_t k = 0; k < values_.size(); ++k) {
      const bool ma = std::isnan(values_[k]), mb = std::isnan(o.values_[k]);
      if (ma != mb || (!ma && values_[k] != o.values_[k])) return false;
    }
    return true;
  }

private:
  std::vector<std::string> columns_;
  std::vector<double> values_;
  std::vector<double> weights_;
};

/// Which cells were originally missing (true = imputed / to impute).
class Mask {
public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), flags_(rows * cols, 0) {}

  static Mask of(const DataMatrix& d) {
    Mask m(d.rows(), d.cols());
    for (std::size_t i = 0; i < d.rows(); ++i)
      for (std::size_t j = 0; j < d.cols(); ++j) m.set(i, j, d.missing(i, j));
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool operator()(std::size_t i, std::size_t j) const { return flags_[i * cols_ + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v = true) { flags_[i * cols_ + j] = v ? 1 : 0; }

  std::size_t count(std::size_t j) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < rows_; ++i) n += (*this)(i, j) ? 1 : 0;
    return n;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto f : flags_) n += f;
    return n;
  }
  std::vector<std::size_t> rows_missing(std::size_t j) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < rows_; ++i)
      if ((*this)(i, j)) out.push_back(i);
    return out;
  }

  /// Copy of `d` with the masked cells blanked.
  DataMatrix apply(const DataMatrix& d) const {
    if (d.rows() != rows_ || d.cols() != cols_) throw DataError("mask shape does not match the data");
    DataMatrix out = d;
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j)
        if ((*this)(i, j)) out.set_missing(i, j);
    return out;
  }

  bool operator==(const Mask&) const = default;

private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<std::uint8_t> flags_;
};

/// Known (weighted) column totals.
using Totals = std::map<std::string, double, std::less<>>;

/// Largest |sum w x - X| / max(1, |X|) over the columns in `totals`.
inline double max_total_error(const DataMatrix& d, const Totals& totals) {
  double worst = 0.0;
  for (const auto& [name, total] : totals) {
    const double s = d.weighted_sum(d.column(name));
    worst = std::max(worst, std::abs(s - total) / std::max(1.0, std::abs(total)));
  }
  return worst;
}

/// Row indices (with edit indices) that fail the edits; rows must be complete.
inline std::vector<std::pair<std::size_t, std::vector<std::size_t>>> edit_violations(const DataMatrix& d,
                                                                                     const EditSystem& edits,
                                                                                     double tol = 1e-9) {
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> out;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    auto bad = check_record(edits, d.known(i), tol);
    if (!bad.empty()) out.emplace_back(i, std::move(bad));
  }
  return out;
}

} // namespace calimpute

#endif // CALIMPUTE_DATA_HPP
