#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

namespace spjscc::numcore {

// Little-endian float32 encoding used by every on-disk blob.
inline void append_f32_le(std::string& out, std::span<const float> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size() * 4);
  char* dst = out.data() + start;
  for (float v : values) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    std::memcpy(dst, &bits, 4);
    dst += 4;
  }
}

inline void read_f32_le(const char* src, std::span<float> out) {
  for (float& v : out) {
    std::uint32_t bits;
    std::memcpy(&bits, src, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    v = std::bit_cast<float>(bits);
    src += 4;
  }
}

}  // namespace spjscc::numcore
