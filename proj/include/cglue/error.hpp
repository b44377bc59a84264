#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cglue {

/// Failure categories raised by the library. The CLI maps them to exit codes.
enum class ErrorCode {
  InvalidArgument,
  ShapeTooLarge,
  UnsupportedDimension,
  DisconnectedDomain,
  OutsideDomain,
  InvalidCollars,
  BundleMismatch,
  UnsupportedOperator,
  DomainMismatch,
  UnsupportedOrder,
  IndicatorTooSharp,
  DegenerateBasis,
  IncompatibleSource,
  NoConvergence,
  EmptyCollar,
  InsufficientDecayData,
  MissingData,
  FamilyDegenerate,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeTooLarge: return "ShapeTooLarge";
    case ErrorCode::UnsupportedDimension: return "UnsupportedDimension";
    case ErrorCode::DisconnectedDomain: return "DisconnectedDomain";
    case ErrorCode::OutsideDomain: return "OutsideDomain";
    case ErrorCode::InvalidCollars: return "InvalidCollars";
    case ErrorCode::BundleMismatch: return "BundleMismatch";
    case ErrorCode::UnsupportedOperator: return "UnsupportedOperator";
    case ErrorCode::DomainMismatch: return "DomainMismatch";
    case ErrorCode::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorCode::IndicatorTooSharp: return "IndicatorTooSharp";
    case ErrorCode::DegenerateBasis: return "DegenerateBasis";
    case ErrorCode::IncompatibleSource: return "IncompatibleSource";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::EmptyCollar: return "EmptyCollar";
    case ErrorCode::InsufficientDecayData: return "InsufficientDecayData";
    case ErrorCode::MissingData: return "MissingData";
    case ErrorCode::FamilyDegenerate: return "FamilyDegenerate";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace cglue
