#pragma once

#include <stdexcept>
#include <string>

namespace sdp {

// Coarse failure classes. The CLI maps these onto process exit codes.
enum class ErrorKind {
  kConfig,
  kShape,
  kTopology,
  kValidation,
  kUsage,
  kInput,
  kData,
  kNumerical,
  kProtocol,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define SDP_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  }

SDP_DEFINE_ERROR(ConfigError, kConfig);
SDP_DEFINE_ERROR(ShapeError, kShape);
SDP_DEFINE_ERROR(TopologyError, kTopology);
SDP_DEFINE_ERROR(ValidationError, kValidation);
SDP_DEFINE_ERROR(UsageError, kUsage);
SDP_DEFINE_ERROR(InputError, kInput);
SDP_DEFINE_ERROR(DataError, kData);
SDP_DEFINE_ERROR(NumericalError, kNumerical);
SDP_DEFINE_ERROR(ProtocolError, kProtocol);

#undef SDP_DEFINE_ERROR

// Process exit code for an error class: 2 config, 3 data, 4 numerical.
int exit_code_for(ErrorKind kind) noexcept;

}  // namespace sdp
