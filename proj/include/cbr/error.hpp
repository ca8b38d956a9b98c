#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace cbr {

// Bad caller input: out-of-range parameters, malformed scenarios.
class invalid_argument_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation produced a non-finite value or hit a singular system.
class numerical_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// State enumeration grew past the configured cap.
class capacity_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Transition blocks failed an internal consistency check (row sums).
class consistency_error : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// A file could not be opened, read or written.
class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fixed-point iteration ran out of iterations; carries the last residuals.
class convergence_error : public numerical_error {
 public:
  convergence_error(const std::string& what, std::vector<double> residuals)
      : numerical_error(what), residuals_(std::move(residuals)) {}

  const std::vector<double>& residuals() const noexcept { return residuals_; }

 private:
  std::vector<double> residuals_;
};

}  // namespace cbr
