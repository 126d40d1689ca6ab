#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace raft {

enum class ErrorCode {
  InvalidArgument,
  ZeroSizeSource,
  InvalidChunkSize,
  SourceReadError,
  AlgorithmMismatch,
  UnknownAlgorithm,
  IoError,
  NotFound,
  LengthMismatch,
  PermissionDenied,
  OutOfBounds,
  PayloadTooLarge,
  DecodeError,
  ProtocolViolation,
  OutOfOrderChunk,
  RetryLimitExceeded,
  DigestMismatchOnResume,
  ConnectionLost,
  ConnectFailed,
  BindFailed,
  InsecureTransport,
  OutOfOrderAppend,
  ImageLengthMismatch,
  StoreUnwritable,
  ScanRootMissing,
  BadPassphrase,
  Locked,
  Unauthorized,
  NoDevices,
  UnknownDevice,
  DeviceActive,
  DuplicatePriority,
  UnknownManufacturer,
  NonPositiveInput,
  IncompleteTrace,
  ParseError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Read failure that remembers how far the reader got.
class SourceReadError : public Error {
 public:
  SourceReadError(const std::string& message, std::uint64_t bytes_consumed)
      : Error(ErrorCode::SourceReadError,
              message + " after " + std::to_string(bytes_consumed) + " bytes"),
        bytes_consumed_(bytes_consumed) {}

  std::uint64_t bytes_consumed() const noexcept { return bytes_consumed_; }

 private:
  std::uint64_t bytes_consumed_;
};

}  // namespace raft
