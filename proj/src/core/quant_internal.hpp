#pragma once

#include <cstdint>
#include <cstring>

#include "omt/quant.hpp"

namespace omt::quant::detail {

inline float load_f16(const std::uint8_t* p) noexcept {
  std::uint16_t h;
  std::memcpy(&h, p, 2);
  return f16_to_f32(h);
}

inline void store_f16(std::uint8_t* p, float v) noexcept {
  const std::uint16_t h = f32_to_f16(v);
  std::memcpy(p, &h, 2);
}

// 6-bit scale and min of sub-block j packed in the 12-byte K-quant field.
inline void scale_min_k4(int j, const std::uint8_t* q, std::uint8_t& d, std::uint8_t& m) noexcept {
  if (j < 4) {
    d = q[j] & 63;
    m = q[j + 4] & 63;
  } else {
    d = static_cast<std::uint8_t>((q[j + 4] & 0xF) | ((q[j - 4] >> 6) << 4));
    m = static_cast<std::uint8_t>((q[j + 4] >> 4) | ((q[j] >> 6) << 4));
  }
}

// Signed 6-bit Q3_K sub-block scale j (0..15), already offset by -32.
inline int q3_scale(int j, const std::uint8_t* s) noexcept {
  int sc = j < 8 ? (s[j] & 0xF) : (s[j - 8] >> 4);
  sc |= ((s[8 + j % 4] >> (2 * (j / 4))) & 3) << 4;
  return sc - 32;
}

// Single-block kernels. `x`/`y` hold block_elems floats, `b` block_bytes.
void dequant_q8_0(const std::uint8_t* b, float* y) noexcept;
void dequant_q2_k(const std::uint8_t* b, float* y) noexcept;
void dequant_q3_k(const std::uint8_t* b, float* y) noexcept;
void dequant_q4_k(const std::uint8_t* b, float* y) noexcept;
void dequant_q5_k(const std::uint8_t* b, float* y) noexcept;
void dequant_q6_k(const std::uint8_t* b, float* y) noexcept;

void quant_q8_0(const float* x, std::uint8_t* b) noexcept;
void quant_q2_k(const float* x, std::uint8_t* b) noexcept;
void quant_q3_k(const float* x, std::uint8_t* b) noexcept;
void quant_q4_k(const float* x, std::uint8_t* b) noexcept;
void quant_q5_k(const float* x, std::uint8_t* b) noexcept;
void quant_q6_k(const float* x, std::uint8_t* b) noexcept;

// Throws UnsupportedQuantType unless kernels exist for `type`.
TypeInfo require_kernels(QuantType type);

}  // namespace omt::quant::detail
