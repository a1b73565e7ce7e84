#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "chromaflow/errors.hpp"

namespace chromaflow::binio {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline void write_f32(std::ostream& os, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(os, v);
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string(what) + ": truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float read_f32(std::istream& is, const char* what) {
  std::uint32_t v = read_u32(is, what);
  float f;
  std::memcpy(&f, &v, 4);
  return f;
}

inline void expect_magic(std::istream& is, const char* magic, const char* what) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0)
    throw FormatError(std::string(what) + ": bad magic, expected \"" + magic + "\"");
}

inline std::ofstream open_out(const std::string& path, const char* what) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(std::string(what) + ": cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path, const char* what) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(std::string(what) + ": cannot open: " + path);
  return is;
}

}  // namespace chromaflow::binio
