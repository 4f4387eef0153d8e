#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace lyapem {

// Base class for all failures raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An update produced NaN/Inf: degenerate responsibilities, overflow, or a
// singular covariance slipped past construction-time checks.
class NonFiniteState : public Error {
 public:
  explicit NonFiniteState(const std::string& what,
                          std::optional<std::size_t> iteration = std::nullopt)
      : Error(what), iteration_(iteration) {}

  // Iteration at which the state left the finite domain, when known.
  std::optional<std::size_t> iteration() const { return iteration_; }

 private:
  std::optional<std::size_t> iteration_;
};

// A covariance matrix failed the SPD (Cholesky) check.
class DegenerateCovariance : public Error {
 public:
  using Error::Error;
};

// A d x d solve hit a numerically singular matrix (flat prior with zero
// total responsibility and no fallback point supplied).
class SingularSystem : public Error {
 public:
  using Error::Error;
};

// Too few usable data points (e.g. fewer than two rate ratios).
class InsufficientData : public Error {
 public:
  using Error::Error;
};

// A brute-force search would exceed its configured evaluation budget.
class BudgetExceeded : public Error {
 public:
  using Error::Error;
};

// Invalid configuration; carries the offending field path.
class ConfigError : public Error {
 public:
  ConfigError(std::string field_path, const std::string& message)
      : Error(field_path + ": " + message), field_path_(std::move(field_path)) {}

  const std::string& field_path() const { return field_path_; }

 private:
  std::string field_path_;
};

}  // namespace lyapem
