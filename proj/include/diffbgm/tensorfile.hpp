#pragma once

// "DBGM" binary tensor container: magic, version, element type, rank, dims,
// row-major float64 little-endian payload. Round-trips are bit-exact.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "diffbgm/core.hpp"

namespace diffbgm {

struct TensorFileError : std::runtime_error {
  std::size_t offset;
  TensorFileError(std::size_t off, const std::string& msg)
      : std::runtime_error("tensor file error at byte " + std::to_string(off) +
                           ": " + msg),
        offset(off) {}
};

namespace tf_detail {

inline constexpr char kMagic[4] = {'D', 'B', 'G', 'M'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kElemF64LE = 1;

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back((x >> (8 * i)) & 0xff);
}

inline std::uint32_t get_u32(const std::vector<std::uint8_t>& b, std::size_t& pos) {
  if (pos + 4 > b.size())
    throw TensorFileError(pos, "truncated header");
  std::uint32_t x = 0;
  for (int i = 0; i < 4; ++i) x |= std::uint32_t(b[pos + i]) << (8 * i);
  pos += 4;
  return x;
}

}  // namespace tf_detail

inline std::vector<std::uint8_t> serialize_tensor(const Tensor& t) {
  using namespace tf_detail;
  if (t.rank() < 1 || t.rank() > 3)
    throw TensorFileError(0, "rank must be 1, 2 or 3");
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, kElemF64LE);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.dims) put_u32(out, static_cast<std::uint32_t>(d));
  static_assert(sizeof(double) == 8);
  std::size_t base = out.size();
  out.resize(base + 8 * t.size());
  // host is little-endian on every platform we target
  std::memcpy(out.data() + base, t.v.data(), 8 * t.size());
  return out;
}

inline Tensor deserialize_tensor(const std::vector<std::uint8_t>& bytes) {
  using namespace tf_detail;
  std::size_t pos = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw TensorFileError(0, "bad magic (expected DBGM)");
  pos = 4;
  std::uint32_t version = get_u32(bytes, pos);
  if (version != kVersion)
    throw TensorFileError(4, "unsupported version " + std::to_string(version));
  std::uint32_t elem = get_u32(bytes, pos);
  if (elem != kElemF64LE)
    throw TensorFileError(8, "unsupported element type " + std::to_string(elem));
  std::uint32_t rank = get_u32(bytes, pos);
  if (rank < 1 || rank > 3)
    throw TensorFileError(12, "rank " + std::to_string(rank) + " out of range");
  std::vector<std::size_t> dims;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t d = get_u32(bytes, pos);
    dims.push_back(d);
    count *= d;
  }
  std::size_t expect = pos + 8 * count;
  if (bytes.size() != expect)
    throw TensorFileError(pos, "payload size mismatch: expected " +
                                   std::to_string(expect) + " bytes total, got " +
                                   std::to_string(bytes.size()));
  Tensor t(dims);
  std::memcpy(t.v.data(), bytes.data() + pos, 8 * count);
  return t;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorFileError(0, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path,
                             const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw TensorFileError(0, "cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw TensorFileError(0, "short write to " + path);
}

inline Tensor read_tensor(const std::string& path) {
  try {
    return deserialize_tensor(read_file_bytes(path));
  } catch (const TensorFileError& e) {
    throw TensorFileError(e.offset, path + ": " + e.what());
  }
}

inline void write_tensor(const Tensor& t, const std::string& path) {
  write_file_bytes(path, serialize_tensor(t));
}

}  // namespace diffbgm
