#include "raft/error.hpp"

namespace raft {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ZeroSizeSource: return "ZeroSizeSource";
    case ErrorCode::InvalidChunkSize: return "InvalidChunkSize";
    case ErrorCode::SourceReadError: return "SourceReadError";
    case ErrorCode::AlgorithmMismatch: return "AlgorithmMismatch";
    case ErrorCode::UnknownAlgorithm: return "UnknownAlgorithm";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::PermissionDenied: return "PermissionDenied";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::PayloadTooLarge: return "PayloadTooLarge";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::OutOfOrderChunk: return "OutOfOrderChunk";
    case ErrorCode::RetryLimitExceeded: return "RetryLimitExceeded";
    case ErrorCode::DigestMismatchOnResume: return "DigestMismatchOnResume";
    case ErrorCode::ConnectionLost: return "ConnectionLost";
    case ErrorCode::ConnectFailed: return "ConnectFailed";
    case ErrorCode::BindFailed: return "BindFailed";
    case ErrorCode::InsecureTransport: return "InsecureTransport";
    case ErrorCode::OutOfOrderAppend: return "OutOfOrderAppend";
    case ErrorCode::ImageLengthMismatch: return "ImageLengthMismatch";
    case ErrorCode::StoreUnwritable: return "StoreUnwritable";
    case ErrorCode::ScanRootMissing: return "ScanRootMissing";
    case ErrorCode::BadPassphrase: return "BadPassphrase";
    case ErrorCode::Locked: return "Locked";
    case ErrorCode::Unauthorized: return "Unauthorized";
    case ErrorCode::NoDevices: return "NoDevices";
    case ErrorCode::UnknownDevice: return "UnknownDevice";
    case ErrorCode::DeviceActive: return "DeviceActive";
    case ErrorCode::DuplicatePriority: return "DuplicatePriority";
    case ErrorCode::UnknownManufacturer: return "UnknownManufacturer";
    case ErrorCode::NonPositiveInput: return "NonPositiveInput";
    case ErrorCode::IncompleteTrace: return "IncompleteTrace";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

}  // namespace raft
