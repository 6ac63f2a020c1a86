// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace tinydrop {

enum class ErrorKind {
  Argument,
  Dimension,
  Config,
  Format,
  Io,
  Training,
  Adaptation,
  Selection,
  Contract,
};

/// Base for every error raised by the library. The kind maps one-to-one onto
/// the C API status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TINYDROP_DEFINE_ERROR(Name, Kind)                                  \
  class Name : public Error {                                              \
   public:                                                                 \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

TINYDROP_DEFINE_ERROR(ArgumentError, Argument)
TINYDROP_DEFINE_ERROR(DimensionError, Dimension)
TINYDROP_DEFINE_ERROR(ConfigError, Config)
TINYDROP_DEFINE_ERROR(FormatError, Format)
TINYDROP_DEFINE_ERROR(IoError, Io)
TINYDROP_DEFINE_ERROR(TrainingError, Training)
TINYDROP_DEFINE_ERROR(AdaptationError, Adaptation)
TINYDROP_DEFINE_ERROR(SelectionError, Selection)
TINYDROP_DEFINE_ERROR(ContractError, Contract)

#undef TINYDROP_DEFINE_ERROR

}  // namespace tinydrop
