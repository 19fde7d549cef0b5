#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace statexp {

/// A model, file or argument violates a documented contract.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced non-finite values or missed its accuracy contract.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The jump graph is not strongly connected. `closed_subset()` is a closed
/// communicating class that the chain cannot leave.
class ReducibleChainError : public ValidationError {
 public:
  ReducibleChainError(std::vector<int> closed_subset, const std::string& what)
      : ValidationError(what), closed_subset_(std::move(closed_subset)) {}

  const std::vector<int>& closed_subset() const noexcept { return closed_subset_; }

 private:
  std::vector<int> closed_subset_;
};

}  // namespace statexp
