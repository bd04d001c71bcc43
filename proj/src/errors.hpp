#pragma once

#include <stdexcept>
#include <string>

namespace bilevel {

enum class ErrorCode {
  InvalidInput,          // non-finite entries, dimension mismatch, bad arguments
  InvalidConfiguration,  // parameter combinations that cannot define a problem/run
  SymmetryViolation,     // matrix asymmetry beyond tolerance
  Singularity,           // nonpositive eigenvalue where a positive floor is required
  InfeasiblePoint,       // point outside the feasible set
  OracleUnavailable,     // a reference oracle could not reach its tolerance
  UnboundedBelow,        // inner minimization diverged
  InsufficientData,      // too few points for a fit
  ParseError,            // malformed config or trace text
  IoError,               // filesystem failures
  NumericFailure,        // non-finite iterate mid-run
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace bilevel
