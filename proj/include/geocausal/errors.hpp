#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace geocausal {

// Precondition failures on arguments (bad sizes, grid mismatch, bad ranges).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Base for modelling failures that carry a human-readable context string.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An observed event falls where the density under comparison is zero.
class OverlapViolation : public Error {
 public:
  OverlapViolation(const std::string& what, int period, double x, double y)
      : Error(what), period_(period), x_(x), y_(y) {}
  int period() const noexcept { return period_; }
  double x() const noexcept { return x_; }
  double y() const noexcept { return y_; }

 private:
  int period_;
  double x_;
  double y_;
};

class RankDeficiency : public Error {
 public:
  RankDeficiency(const std::string& what, std::vector<std::string> columns)
      : Error(what), columns_(std::move(columns)) {}
  const std::vector<std::string>& columns() const noexcept { return columns_; }

 private:
  std::vector<std::string> columns_;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> trace)
      : Error(what), trace_(std::move(trace)) {}
  const std::vector<double>& deviance_trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace geocausal
