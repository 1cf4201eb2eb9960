#include "levo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace levo {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  void read(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) fail(ErrorCode::kTruncatedPayload, std::string("truncated payload while reading ") + what);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const ParamStore& params) {
  std::string out = "LEVO";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, params.size());
  for (const auto& [name, t] : params.tensors()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  return out;
}

ParamStore deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4 || bytes.compare(0, 4, "LEVO") != 0) fail(ErrorCode::kBadMagic, "bad magic");
  Reader r(bytes);
  r.get<std::uint32_t>("magic");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    fail(ErrorCode::kVersionMismatch, "version mismatch: file has " + std::to_string(version) + ", expected " +
                                          std::to_string(kCheckpointVersion));
  const auto count = r.get<std::uint64_t>("entry count");
  ParamStore store;
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name(len, '\0');
    r.read(name.data(), len, "name");
    const auto rank = r.get<std::uint32_t>("rank");
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::int64_t>(r.get<std::uint64_t>("dims")));
    const auto n = static_cast<std::uint64_t>(numel(shape));
    if (n > r.remaining() / sizeof(float)) fail(ErrorCode::kTruncatedPayload, "truncated payload in " + name);
    Tensor t(shape);
    r.read(t.data.data(), n * sizeof(float), "payload");
    store.add(name, std::move(t));
  }
  return store;
}

void save_checkpoint(const ParamStore& params, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), ErrorCode::kIo, "cannot open for writing: " + path);
  const std::string bytes = serialize_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  check(f.good(), ErrorCode::kIo, "write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), ErrorCode::kIo, "cannot open for reading: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace levo
