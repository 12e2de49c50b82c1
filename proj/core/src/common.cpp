#include "dvtk/common.hpp"

#include <sstream>

DVTK_NAMESPACE_BEGIN

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int exit_code_for(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kShape:
      return 2;
    case ErrorKind::kData:
    case ErrorKind::kFormat:
    case ErrorKind::kCompatibility:
    case ErrorKind::kInput:
      return 3;
    default:
      return 4;
  }
}

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::kConfig: return "configuration error";
    case ErrorKind::kShape: return "shape error";
    case ErrorKind::kData: return "data error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kCompatibility: return "compatibility error";
    case ErrorKind::kInput: return "input error";
    case ErrorKind::kTraining: return "training error";
    case ErrorKind::kAdapter: return "adapter error";
    case ErrorKind::kRuntime: return "runtime error";
  }
  return "error";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

DVTK_NAMESPACE_END
