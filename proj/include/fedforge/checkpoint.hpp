#pragma once

// Binary checkpoint format, little-endian throughout:
//
//   "FFRG"                magic
//   u16                   format version (1)
//   u32                   tensor count
//   per tensor:
//     u16 + bytes         UTF-8 name
//     u8                  ndim
//     u32 * ndim          dims
//     f32 * prod(dims)    values, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>

#include "fedforge/param_set.hpp"

namespace fedforge {

inline constexpr std::string_view kCheckpointMagic = "FFRG";
inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xffu));
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get_le(const char* what) {
    need(sizeof(T), what);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const ParamSet& params) {
  std::string out(kCheckpointMagic);
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params.entries()) {
    if (t.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw CheckpointError("tensor name too long: " + t.name.substr(0, 32) + "...");
    }
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw CheckpointError("tensor '" + t.name + "' has too many dimensions");
    }
    detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) {
      if (d > std::numeric_limits<std::uint32_t>::max()) {
        throw CheckpointError("tensor '" + t.name + "' dimension exceeds u32");
      }
      detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    }
    for (float v : t.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline ParamSet decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (bytes.size() < kCheckpointMagic.size() ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError("not a checkpoint: bad magic bytes (expected \"FFRG\")");
  }
  in.take(kCheckpointMagic.size(), "magic");
  const auto version = in.get_le<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = in.get_le<std::uint32_t>("tensor count");
  ParamSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = in.get_le<std::uint16_t>("name length");
    std::string name(in.take(name_len, "name"));
    const auto ndim = in.get_le<std::uint8_t>("ndim");
    Shape shape(ndim);
    for (auto& d : shape) d = in.get_le<std::uint32_t>("dims");
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(in.get_le<std::uint32_t>("values"));
    try {
      params.add(std::move(name), std::move(shape), std::move(values));
    } catch (const std::invalid_argument& e) {
      throw CheckpointError(e.what());
    }
  }
  if (!in.done()) throw CheckpointError("trailing bytes after last tensor");
  return params;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  const auto bytes = encode_checkpoint(params);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing " + path.string());
}

inline ParamSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace fedforge
