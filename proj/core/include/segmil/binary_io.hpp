#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "segmil/error.hpp"

namespace segmil::io {

// Little-endian primitives shared by every binary container in the library.

template <typename T>
T ByteSwap(T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

template <typename T>
void WriteLE(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) value = ByteSwap(value);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T ReadLE(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw Error(ErrorCode::kCorruptStore, "unexpected end of stream");
  if constexpr (std::endian::native == std::endian::big) value = ByteSwap(value);
  return value;
}

inline void WriteFloats(std::ostream& os, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(float)));
  } else {
    for (float v : values) WriteLE(os, v);
  }
}

inline void ReadFloats(std::istream& is, std::span<float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!is) throw Error(ErrorCode::kCorruptStore, "truncated float payload");
  } else {
    for (float& v : values) v = ReadLE<float>(is);
  }
}

inline void WriteString(std::ostream& os, const std::string& s) {
  WriteLE<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string ReadString(std::istream& is, std::uint32_t max_len = 1u << 28) {
  const auto n = ReadLE<std::uint32_t>(is);
  if (n > max_len) throw Error(ErrorCode::kCorruptStore, "string length out of range");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw Error(ErrorCode::kCorruptStore, "truncated string");
  return s;
}

inline void WriteShape(std::ostream& os, std::span<const std::size_t> shape) {
  WriteLE<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) WriteLE<std::uint64_t>(os, d);
}

inline std::vector<std::size_t> ReadShape(std::istream& is) {
  const auto rank = ReadLE<std::uint32_t>(is);
  if (rank > 16) throw Error(ErrorCode::kCorruptStore, "tensor rank out of range");
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(ReadLE<std::uint64_t>(is));
  return shape;
}

inline void ExpectMagic(std::istream& is, const char (&magic)[5], const char* what) {
  char got[4] = {};
  is.read(got, 4);
  if (!is || std::memcmp(got, magic, 4) != 0) {
    throw Error(ErrorCode::kCorruptStore, std::string("bad magic bytes in ") + what);
  }
}

}  // namespace segmil::io
