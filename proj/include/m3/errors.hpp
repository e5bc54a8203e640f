#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace m3 {

// Process exit codes used by the command-line tool. Every error type maps
// onto exactly one of these.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kData = 3,
  kNumeric = 4,
  kInfeasible = 5,
};

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, ExitCode code = ExitCode::kData)
      : std::runtime_error(what), code_(code) {}
  ExitCode exit_code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

#define M3_DEFINE_ERROR(Name, Code)                                   \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(what, Code) {}     \
  }

// graph structure
M3_DEFINE_ERROR(CycleError, ExitCode::kData);
M3_DEFINE_ERROR(DanglingEdgeError, ExitCode::kData);
M3_DEFINE_ERROR(NoObservationError, ExitCode::kData);

// program text
M3_DEFINE_ERROR(UnknownFunctionError, ExitCode::kData);
M3_DEFINE_ERROR(UndefinedReferenceError, ExitCode::kData);

// files
M3_DEFINE_ERROR(FormatError, ExitCode::kData);
M3_DEFINE_ERROR(DimensionMismatchError, ExitCode::kData);
M3_DEFINE_ERROR(DuplicateIdError, ExitCode::kData);
M3_DEFINE_ERROR(MissingFeatureError, ExitCode::kData);
M3_DEFINE_ERROR(VersionError, ExitCode::kData);
M3_DEFINE_ERROR(SpecError, ExitCode::kData);
M3_DEFINE_ERROR(JoinError, ExitCode::kData);
M3_DEFINE_ERROR(IoError, ExitCode::kData);
M3_DEFINE_ERROR(UnknownSampleError, ExitCode::kData);

// selection / evaluation
M3_DEFINE_ERROR(InvalidChoiceError, ExitCode::kData);
M3_DEFINE_ERROR(NoDataError, ExitCode::kData);
M3_DEFINE_ERROR(UnobservedOutcomeError, ExitCode::kData);
M3_DEFINE_ERROR(InfeasibleBudgetError, ExitCode::kInfeasible);

// numerics
M3_DEFINE_ERROR(ShapeError, ExitCode::kNumeric);
M3_DEFINE_ERROR(NonFiniteLossError, ExitCode::kNumeric);

#undef M3_DEFINE_ERROR

// Parse failure at a 1-based line and column of the input text.
class SyntaxError : public Error {
 public:
  SyntaxError(const std::string& msg, std::size_t line, std::size_t column)
      : Error("syntax error at " + std::to_string(line) + ":" +
              std::to_string(column) + ": " + msg),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace m3
