#include "levo/tensor.hpp"

#include <cstring>

namespace levo {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kUnsupported: return "unsupported operation";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncatedPayload: return "truncated payload";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kConfig: return "invalid config";
    case ErrorCode::kContextOverflow: return "context overflow";
    case ErrorCode::kUnreachableTarget: return "unreachable target";
    case ErrorCode::kRuntime: return "runtime error";
  }
  return "unknown";
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::uint64_t checksum(const ParamStore& params, const std::string& prefix) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : params.tensors()) {
    if (name.rfind(prefix, 0) != 0) continue;
    feed(name.data(), name.size());
    feed(t.data.data(), t.data.size() * sizeof(float));
  }
  return h;
}

}  // namespace levo
