#include "wsteg/error.hpp"

#include <cstdio>

namespace wsteg {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedDtype: return "UnsupportedDtype";
    case ErrorCode::OverlappingTensors: return "OverlappingTensors";
    case ErrorCode::UnsupportedWriteFormat: return "UnsupportedWriteFormat";
    case ErrorCode::IndexOutOfGroup: return "IndexOutOfGroup";
    case ErrorCode::WriteToQuantizedDtype: return "WriteToQuantizedDtype";
    case ErrorCode::ValueNotRepresentable: return "ValueNotRepresentable";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::SegmentTooWide: return "SegmentTooWide";
    case ErrorCode::BadWidth: return "BadWidth";
    case ErrorCode::CodeOutOfRange: return "CodeOutOfRange";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::IncompatibleShape: return "IncompatibleShape";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::CapacityExceeded: return "CapacityExceeded";
    case ErrorCode::StabilityVerificationFailed: return "StabilityVerificationFailed";
    case ErrorCode::GroupResolutionError: return "GroupResolutionError";
    case ErrorCode::UngroupableModel: return "UngroupableModel";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::EmptyReports: return "EmptyReports";
    case ErrorCode::EmptySelection: return "EmptySelection";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidDocument: return "InvalidDocument";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

namespace {

std::string crc_message(std::uint32_t expected, std::uint32_t actual) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), "payload checksum mismatch: expected %08x, recovered %08x",
                expected, actual);
  return buf;
}

}  // namespace

ChecksumMismatchError::ChecksumMismatchError(std::vector<std::uint8_t> recovered,
                                             std::uint32_t expected_crc,
                                             std::uint32_t actual_crc)
    : Error(ErrorCode::ChecksumMismatch, crc_message(expected_crc, actual_crc)),
      recovered_(std::move(recovered)),
      expected_crc_(expected_crc),
      actual_crc_(actual_crc) {}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace wsteg
