#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace nisynth {

// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad shapes, non-symmetric input to a symmetric routine, unmet preconditions.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Iterative routine did not converge, or a result failed its own sanity check.
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// Linear solve with a (numerically) singular coefficient matrix.
class SingularMatrix : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

// Sylvester/Lyapunov operator is singular (lambda_i + lambda_j ~ 0).
class SingularEquation : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

// Evaluation point too close to a pole of the transfer function.
class PoleProximity : public DomainError {
 public:
  using DomainError::DomainError;
};

// A plant fails one of the standing assumptions A1-A4.
class AssumptionViolation : public DomainError {
 public:
  using DomainError::DomainError;
};

// A certificate matrix whose blocks cannot be inverted as required.
class DegenerateCertificate : public DomainError {
 public:
  using DomainError::DomainError;
};

// A synthesis condition fails (or a stage's solver gives up). `stage` names
// the pipeline step; `numerical` separates solver trouble from a condition
// that genuinely does not hold.
class SynthesisFailure : public Error {
 public:
  SynthesisFailure(std::string stage, const std::string& what, bool numerical = false)
      : Error(stage + ": " + what), stage_(std::move(stage)), numerical_(numerical) {}

  const std::string& stage() const { return stage_; }
  bool numerical() const { return numerical_; }

 private:
  std::string stage_;
  bool numerical_;
};

// The ARE route could not produce a certificate. This never means "not NI".
class CertificationFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace nisynth
