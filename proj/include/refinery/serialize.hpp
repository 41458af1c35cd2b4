#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "refinery/errors.hpp"

// Little-endian binary primitives shared by the checkpoint, packed-dataset
// and label-cache formats.

namespace refinery {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; big-endian hosts unsupported");

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }
inline void write_u32(std::ostream& os, std::uint32_t v) { write_bytes(os, &v, 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { write_bytes(os, &v, 8); }
inline void write_f32(std::ostream& os, float v) { write_bytes(os, &v, 4); }

inline void write_f32_array(std::ostream& os, const float* p, std::size_t n) {
  write_bytes(os, p, n * sizeof(float));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n,
                       const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw IoError(std::string("unexpected end of file while reading ") + what);
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
  std::uint8_t v;
  read_bytes(is, &v, 1, what);
  return v;
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  std::uint32_t v;
  read_bytes(is, &v, 4, what);
  return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  std::uint64_t v;
  read_bytes(is, &v, 8, what);
  return v;
}

inline float read_f32(std::istream& is, const char* what) {
  float v;
  read_bytes(is, &v, 4, what);
  return v;
}

inline void read_f32_array(std::istream& is, float* p, std::size_t n,
                           const char* what) {
  read_bytes(is, p, n * sizeof(float), what);
}

/// Reads a 4-byte magic and fails with the byte offset if it mismatches.
inline void expect_magic(std::istream& is, const char magic[4],
                         const std::string& path) {
  const auto offset = is.tellg();
  char got[4];
  read_bytes(is, got, 4, "magic");
  if (std::memcmp(got, magic, 4) != 0)
    throw IoError(path + ": bad magic at offset " +
                  std::to_string(static_cast<long long>(offset)) +
                  " (expected \"" + std::string(magic, 4) + "\")");
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string out((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << text;
  if (!os) throw IoError("write failed: " + path);
}

} // namespace refinery
