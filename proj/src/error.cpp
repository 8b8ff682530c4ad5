#include "gridshield/error.hpp"

namespace gridshield {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedDocument: return "MalformedDocument";
    case ErrorCode::UnknownBusRef: return "UnknownBusRef";
    case ErrorCode::DuplicateBusId: return "DuplicateBusId";
    case ErrorCode::NoSlackBus: return "NoSlackBus";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::InfeasibleInit: return "InfeasibleInit";
    case ErrorCode::StepDivergence: return "StepDivergence";
    case ErrorCode::SingularNetwork: return "SingularNetwork";
    case ErrorCode::NotHurwitz: return "NotHurwitz";
    case ErrorCode::NotStabilizable: return "NotStabilizable";
    case ErrorCode::NumericalFailure: return "NumericalFailure";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::Unstable: return "Unstable";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::NoOscillatoryMode: return "NoOscillatoryMode";
    case ErrorCode::TargetModeUncontrollable: return "TargetModeUncontrollable";
    case ErrorCode::IncompatibleBaseline: return "IncompatibleBaseline";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

}  // namespace gridshield
