// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace memeblip {

enum class ErrorKind : std::uint8_t {
  Dimension,
  Config,
  State,
  Data,
  Format,
  Corruption,
  Normalization,
  Shape,
  Version,
  Contract,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries a kind so the CLI can map it to
/// an exit code and tests can assert on the category rather than the text.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define MEMEBLIP_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

MEMEBLIP_DEFINE_ERROR(DimensionError, Dimension)
MEMEBLIP_DEFINE_ERROR(ConfigError, Config)
MEMEBLIP_DEFINE_ERROR(StateError, State)
MEMEBLIP_DEFINE_ERROR(DataError, Data)
MEMEBLIP_DEFINE_ERROR(FormatError, Format)
MEMEBLIP_DEFINE_ERROR(NormalizationError, Normalization)
MEMEBLIP_DEFINE_ERROR(ShapeError, Shape)
MEMEBLIP_DEFINE_ERROR(VersionError, Version)
MEMEBLIP_DEFINE_ERROR(ContractError, Contract)
MEMEBLIP_DEFINE_ERROR(IoError, Io)

#undef MEMEBLIP_DEFINE_ERROR

/// Truncated or inconsistent payload; `offset` is the byte position where
/// reading failed.
class CorruptionError : public Error {
 public:
  CorruptionError(const std::string& what, std::uint64_t offset)
      : Error(ErrorKind::Corruption,
              what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

inline const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Config: return "config";
    case ErrorKind::State: return "state";
    case ErrorKind::Data: return "data";
    case ErrorKind::Format: return "format";
    case ErrorKind::Corruption: return "corruption";
    case ErrorKind::Normalization: return "normalization";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Version: return "version";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace memeblip
