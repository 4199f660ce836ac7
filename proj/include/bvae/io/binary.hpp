#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "bvae/core/errors.hpp"

namespace bvae::io {

// Little-endian primitive encoding shared by the binary file formats.

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw DataError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

template <typename T>
void write_le_array(std::ostream& os, const T* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(T)));
  } else {
    for (std::size_t i = 0; i < n; ++i) write_le(os, data[i]);
  }
}

template <typename T>
void read_le_array(std::istream& is, T* data, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(T)))) {
      throw DataError("unexpected end of file");
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) data[i] = read_le<T>(is);
  }
}

inline void write_magic(std::ostream& os, std::string_view magic) { os.write(magic.data(), 4); }

inline void expect_magic(std::istream& is, std::string_view magic, std::string_view what) {
  char buf[4];
  if (!is.read(buf, 4) || std::string_view(buf, 4) != magic) {
    throw DataError(std::string(what) + ": bad magic, expected '" + std::string(magic) + "'");
  }
}

}  // namespace bvae::io
