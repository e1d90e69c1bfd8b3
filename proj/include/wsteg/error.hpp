#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace wsteg {

enum class ErrorCode {
  MalformedHeader,
  UnsupportedDtype,
  OverlappingTensors,
  UnsupportedWriteFormat,
  IndexOutOfGroup,
  WriteToQuantizedDtype,
  ValueNotRepresentable,
  WidthMismatch,
  SegmentTooWide,
  BadWidth,
  CodeOutOfRange,
  NonFiniteInput,
  IncompatibleShape,
  ChecksumMismatch,
  LengthMismatch,
  CapacityExceeded,
  StabilityVerificationFailed,
  GroupResolutionError,
  UngroupableModel,
  DegenerateBaseline,
  EmptyReports,
  EmptySelection,
  InvalidArgument,
  InvalidDocument,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Thrown when recovered payload bits fail the integrity check. Carries the
// bytes that were recovered so callers can measure the damage.
class ChecksumMismatchError : public Error {
 public:
  ChecksumMismatchError(std::vector<std::uint8_t> recovered, std::uint32_t expected_crc,
                        std::uint32_t actual_crc);

  const std::vector<std::uint8_t>& recovered() const noexcept { return recovered_; }
  std::uint32_t expected_crc() const noexcept { return expected_crc_; }
  std::uint32_t actual_crc() const noexcept { return actual_crc_; }

 private:
  std::vector<std::uint8_t> recovered_;
  std::uint32_t expected_crc_;
  std::uint32_t actual_crc_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace wsteg
