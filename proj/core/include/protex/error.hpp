#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace protex {

enum class ErrorCode {
  // formats / embedding store
  MagicMismatch,
  VersionMismatch,
  DimMismatch,
  CountMismatch,
  TokenCountMismatch,
  NonFinite,
  IoError,
  ParseError,
  // providers / perturbation
  EmptyInput,
  MaskLengthMismatch,
  AllTokensRemoved,
  ProviderCapability,
  // patching
  ZeroVector,
  TooShort,
  Overflow,
  // model / losses
  EmptyClass,
  EmptyDataset,
  NoOwnClassPrototype,
  NoOtherClassPrototype,
  IndivisibleM,
  ModeMismatch,
  Diverged,
  // interaction
  FrozenTarget,
  CertaintyRange,
  UnknownPrototype,
  UnknownExample,
  InvalidCommand,
  // gateway / config
  ConfigInvalid,
  BindFailure,
  InvalidState,
};

std::string_view code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(code_name(code)) + ": " + detail),
        code_(code),
        detail_(detail) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

#define PROTEX_THROW_IF(cond, code, detail)        \
  do {                                             \
    if (cond) throw ::protex::Error((code), (detail)); \
  } while (0)

}  // namespace protex
