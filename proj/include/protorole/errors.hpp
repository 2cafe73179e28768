#pragma once

#include <stdexcept>
#include <string>

namespace protorole {

/// A caller broke a documented precondition (non-monotone cutpoints,
/// dimension mismatch, rating missing where one is required, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An input or configuration cannot be served by the requested operation
/// (unknown verb in training mode, arity above the cap, missing annotations).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The objective became non-finite during fitting.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t epoch, std::string clause_id)
      : std::runtime_error(what), epoch_(epoch), clause_id_(std::move(clause_id)) {}
  std::size_t epoch() const { return epoch_; }
  const std::string& clause_id() const { return clause_id_; }

 private:
  std::size_t epoch_;
  std::string clause_id_;
};

}  // namespace protorole
