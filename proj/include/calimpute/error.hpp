#ifndef CALIMPUTE_ERROR_HPP
#define CALIMPUTE_ERROR_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calimpute {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (edit rules, data files, configs).
class ParseError : public Error {
public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : Error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line), column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

private:
  std::size_t line_;
  std::size_t column_;
};

/// Data that is well-formed but unusable (unknown columns, bad weights, ...).
class DataError : public Error {
public:
  using Error::Error;
};

/// Regression design whose columns are linearly dependent.
class RankDeficientError : public DataError {
public:
  RankDeficientError(const std::string& what, std::size_t column)
      : DataError(what), column_(column) {}

  /// Index of the offending column in the design (0 = intercept).
  std::size_t column() const noexcept { return column_; }

private:
  std::size_t column_;
};

/// Too few observations to fit a model.
class InsufficientDataError : public DataError {
public:
  using DataError::DataError;
};

/// The constraints admit no solution. `witness` names the contradiction.
class InfeasibleError : public Error {
public:
  explicit InfeasibleError(const std::string& what, std::string witness = {})
      : Error(what), witness_(std::move(witness)) {}

  const std::string& witness() const noexcept { return witness_; }

private:
  std::string witness_;
};

/// An iterative solver ran out of iterations.
class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, std::vector<double> last_iterate, double residual)
      : Error(what), last_iterate_(std::move(last_iterate)), residual_(residual) {}

  const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
  double residual() const noexcept { return residual_; }

private:
  std::vector<double> last_iterate_;
  double residual_;
};

/// Invalid combination of options supplied by a caller.
class UsageError : public Error {
public:
  using Error::Error;
};

} // namespace calimpute

#endif // CALIMPUTE_ERROR_HPP
