#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "rcg/tensor.hpp"

namespace rcg::io {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::string& what) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) throw DataError(what + ": unexpected end of file");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

inline void expect_magic(std::istream& is, const std::string& magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw DataError(what + ": bad magic (expected \"" + magic + "\")");
  }
}

}  // namespace rcg::io
