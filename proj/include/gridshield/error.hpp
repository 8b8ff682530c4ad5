#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gridshield {

enum class ErrorCode {
  // case documents and validation
  MalformedDocument,
  UnknownBusRef,
  DuplicateBusId,
  NoSlackBus,
  InvariantViolation,
  // numerics
  NonConvergence,
  SingularJacobian,
  InfeasibleInit,
  StepDivergence,
  SingularNetwork,
  NotHurwitz,
  NotStabilizable,
  NumericalFailure,
  Infeasible,
  SolverFailure,
  Unstable,
  OutOfRange,
  NoOscillatoryMode,
  TargetModeUncontrollable,
  IncompatibleBaseline,
  // I/O
  IoFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure the library reports carries a machine-readable code plus a
/// human diagnostic. Callers switch on code(); what() is for people.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace gridshield
