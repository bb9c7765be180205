#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace crt {

struct ValidationIssue {
  std::string cluster_id;  // empty when the issue is dataset-wide
  std::string column;
  std::string kind;
  std::string message;
};

// Input data or configuration does not satisfy the model's requirements.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
  ValidationError(const std::string& what, std::vector<ValidationIssue> issues)
      : std::runtime_error(what), issues_(std::move(issues)) {}

  const std::vector<ValidationIssue>& issues() const noexcept { return issues_; }

 private:
  std::vector<ValidationIssue> issues_;
};

// A fit or solve failed: rank deficiency, separation, singular bread, ...
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Estimates fell outside the domain of the requested effect scale.
class DomainError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace crt
