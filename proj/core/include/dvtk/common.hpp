#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// The library is compiled twice: single precision for training and
// evaluation, double precision for gradient verification. Each build lives
// in its own inline namespace so both can be linked into one binary.
#ifdef DVTK_DOUBLE
#define DVTK_ABI f64
#else
#define DVTK_ABI f32
#endif

#define DVTK_NAMESPACE_BEGIN \
  namespace dvtk {           \
  inline namespace DVTK_ABI {
#define DVTK_NAMESPACE_END \
  }                        \
  }

DVTK_NAMESPACE_BEGIN

#ifdef DVTK_DOUBLE
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind {
  kConfig,         // invalid configuration or argument (exit 2)
  kShape,          // incompatible tensor geometry (exit 2)
  kData,           // malformed or out-of-range data (exit 3)
  kFormat,         // unrecognized file format (exit 3)
  kCompatibility,  // artifact produced by a different model (exit 3)
  kInput,          // non-finite or otherwise invalid numeric input (exit 3)
  kTraining,       // training diverged (exit 4)
  kAdapter,        // injected feature extractor failed (exit 4)
  kRuntime,        // I/O and everything else (exit 4)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

int exit_code_for(ErrorKind kind) noexcept;
const char* error_kind_name(ErrorKind kind) noexcept;

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

DVTK_NAMESPACE_END
