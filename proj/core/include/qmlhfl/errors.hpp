// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace qmlhfl {

enum class ErrorCode {
  // topology
  kInvalidLayerSizes,
  kOrphanNode,
  kEmptyServer,
  kLayerSkip,
  kTooDeep,
  kNotUniform,
  // learning task
  kBatchTooLarge,
  kInsufficientPool,
  kUnknownDevice,
  // quantizer
  kNonFiniteInput,
  kInvalidQuantizer,
  // engine
  kDimensionMismatch,
  kQuantizerCountMismatch,
  kInvalidSchedule,
  // theory
  kLayerOutOfRange,
  kNeedsTwoLayers,
  kWrongSpecialization,
  kNoFeasibleMu,
  kInvalidParams,
  // latency
  kNonPositiveRate,
  kLengthMismatch,
  // optimizer
  kNonPositiveTau,
  kInfeasibleStart,
  kSubproblemFailure,
  kNoFeasiblePoint,
  kSearchTooLarge,
  kRegimeViolation,
  // configuration / io
  kConfigError,
  kIoError,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so that
/// callers (notably the command line tool) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace qmlhfl
