#include "protex/error.hpp"

namespace protex {

std::string_view code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::TokenCountMismatch: return "TokenCountMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MaskLengthMismatch: return "MaskLengthMismatch";
    case ErrorCode::AllTokensRemoved: return "AllTokensRemoved";
    case ErrorCode::ProviderCapability: return "ProviderCapability";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::TooShort: return "TooShort";
    case ErrorCode::Overflow: return "Overflow";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NoOwnClassPrototype: return "NoOwnClassPrototype";
    case ErrorCode::NoOtherClassPrototype: return "NoOtherClassPrototype";
    case ErrorCode::IndivisibleM: return "IndivisibleM";
    case ErrorCode::ModeMismatch: return "ModeMismatch";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::FrozenTarget: return "FrozenTarget";
    case ErrorCode::CertaintyRange: return "CertaintyRange";
    case ErrorCode::UnknownPrototype: return "UnknownPrototype";
    case ErrorCode::UnknownExample: return "UnknownExample";
    case ErrorCode::InvalidCommand: return "InvalidCommand";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::BindFailure: return "BindFailure";
    case ErrorCode::InvalidState: return "InvalidState";
  }
  return "Unknown";
}

}  // namespace protex
