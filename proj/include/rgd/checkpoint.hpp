#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "rgd/layers.hpp"

namespace rgd {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes via a temporary sibling and rename, so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_string(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint64_t le(int width) {
    need(width);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += width;
    return v;
  }
  std::string str() {
    const auto n = le(4);
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint truncated");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline constexpr char kCheckpointMagic[4] = {'R', 'G', 'D', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "RGDL", u32 version, descriptor (u32 length + UTF-8), then per tensor until EOF:
/// name (u32 length + UTF-8), u32 rank, u64 dims, little-endian f64 values. Integers are
/// little-endian.
inline std::string serialize_params(const ModelParams& p) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_string(out, p.descriptor);
  for (const auto& t : p.tensors) {
    detail::put_string(out, t.name);
    detail::put_u32(out, static_cast<std::uint32_t>(t.value.rank()));
    for (std::size_t d : t.value.shape()) detail::put_u64(out, d);
    for (double v : t.value.storage()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      detail::put_u64(out, bits);
    }
  }
  return out;
}

inline ModelParams deserialize_params(const std::string& bytes) {
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw IoError("not an RGDL checkpoint (bad magic)");
  detail::Reader r(bytes);
  r.raw(4);
  if (const auto version = r.le(4); version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  ModelParams p;
  p.descriptor = r.str();
  while (!r.done()) {
    NamedTensor t;
    t.name = r.str();
    Shape shape(r.le(4));
    for (auto& d : shape) d = r.le(8);
    std::vector<double> data(shape_size(shape));
    for (double& v : data) {
      const std::uint64_t bits = r.le(8);
      std::memcpy(&v, &bits, 8);
    }
    t.value = Tensor(std::move(shape), std::move(data));
    p.tensors.push_back(std::move(t));
  }
  return p;
}

inline void save_params(const ModelParams& p, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_params(p));
}

inline ModelParams load_params(const std::filesystem::path& path) { return deserialize_params(read_file(path)); }

/// FNV-1a over the serialized bytes; identifies a checkpoint regardless of file path.
inline std::uint64_t params_id(const ModelParams& p) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : serialize_params(p)) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace rgd
