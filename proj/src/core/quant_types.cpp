#include <array>
#include <bit>
#include <cmath>
#include <cstring>

#include "omt/error.hpp"
#include "omt/quant.hpp"

namespace omt::quant {
namespace {

struct Entry {
  QuantType type;
  TypeInfo info;
};

// Geometry for every id in the public type table. Only the rows with
// has_kernels set can be converted; the rest are known sizes so inspect and
// validate can reason about files that use them.
constexpr std::array<Entry, 32> kTable{{
    {QuantType::F32, {"F32", 1, 4, true, 9}},
    {QuantType::F16, {"F16", 1, 2, true, 8}},
    {QuantType::Q4_0, {"Q4_0", 32, 18, false, 0}},
    {QuantType::Q4_1, {"Q4_1", 32, 20, false, 0}},
    {QuantType::Q5_0, {"Q5_0", 32, 22, false, 0}},
    {QuantType::Q5_1, {"Q5_1", 32, 24, false, 0}},
    {QuantType::Q8_0, {"Q8_0", 32, 34, true, 6}},
    {QuantType::Q8_1, {"Q8_1", 32, 36, false, 0}},
    {QuantType::Q2_K, {"Q2_K", 256, 84, true, 1}},
    {QuantType::Q3_K, {"Q3_K", 256, 110, true, 2}},
    {QuantType::Q4_K, {"Q4_K", 256, 144, true, 3}},
    {QuantType::Q5_K, {"Q5_K", 256, 176, true, 4}},
    {QuantType::Q6_K, {"Q6_K", 256, 210, true, 5}},
    {QuantType::Q8_K, {"Q8_K", 256, 292, false, 0}},
    {QuantType::IQ2_XXS, {"IQ2_XXS", 256, 66, false, 0}},
    {QuantType::IQ2_XS, {"IQ2_XS", 256, 74, false, 0}},
    {QuantType::IQ3_XXS, {"IQ3_XXS", 256, 98, false, 0}},
    {QuantType::IQ1_S, {"IQ1_S", 256, 50, false, 0}},
    {QuantType::IQ4_NL, {"IQ4_NL", 32, 18, false, 0}},
    {QuantType::IQ3_S, {"IQ3_S", 256, 110, false, 0}},
    {QuantType::IQ2_S, {"IQ2_S", 256, 82, false, 0}},
    {QuantType::IQ4_XS, {"IQ4_XS", 256, 136, false, 0}},
    {QuantType::I8, {"I8", 1, 1, false, 0}},
    {QuantType::I16, {"I16", 1, 2, false, 0}},
    {QuantType::I32, {"I32", 1, 4, false, 0}},
    {QuantType::I64, {"I64", 1, 8, false, 0}},
    {QuantType::F64, {"F64", 1, 8, false, 0}},
    {QuantType::IQ1_M, {"IQ1_M", 256, 56, false, 0}},
    {QuantType::BF16, {"BF16", 1, 2, false, 0}},
    {QuantType::TQ1_0, {"TQ1_0", 256, 54, false, 0}},
    {QuantType::TQ2_0, {"TQ2_0", 256, 66, false, 0}},
    {QuantType::MXFP4, {"MXFP4", 32, 17, false, 0}},
}};

constexpr std::array<QuantType, 8> kSupported{
    QuantType::Q2_K, QuantType::Q3_K, QuantType::Q4_K, QuantType::Q5_K,
    QuantType::Q6_K, QuantType::Q8_0, QuantType::F16,  QuantType::F32,
};

}  // namespace

std::optional<TypeInfo> type_info(QuantType type) noexcept {
  for (const auto& e : kTable) {
    if (e.type == type) return e.info;
  }
  return std::nullopt;
}

bool has_kernels(QuantType type) noexcept {
  const auto info = type_info(type);
  return info && info->has_kernels;
}

std::string type_name(QuantType type) {
  if (const auto info = type_info(type)) return std::string(info->name);
  return "type" + std::to_string(static_cast<std::uint32_t>(type));
}

std::optional<QuantType> parse_type_name(std::string_view name) noexcept {
  for (const auto& e : kTable) {
    if (e.info.name.size() != name.size()) continue;
    bool same = true;
    for (std::size_t i = 0; i < name.size() && same; ++i) {
      char c = name[i];
      if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
      same = c == e.info.name[i];
    }
    if (same) return e.type;
  }
  return std::nullopt;
}

std::span<const QuantType> supported_types() noexcept { return kSupported; }

std::uint64_t byte_size(QuantType type, std::uint64_t n_elems) {
  const auto info = type_info(type);
  if (!info) fail(Errc::UnsupportedQuantType, "unknown type id " + type_name(type));
  if (n_elems % info->block_elems != 0) {
    fail(Errc::GeometryMismatch, std::to_string(n_elems) + " elements is not a whole number of " +
                                     std::string(info->name) + " blocks of " +
                                     std::to_string(info->block_elems));
  }
  return n_elems / info->block_elems * info->block_bytes;
}

float f16_to_f32(std::uint16_t h) noexcept {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      // subnormal: renormalize into the wider exponent range
      int e = -1;
      do {
        ++e;
        mant <<= 1;
      } while ((mant & 0x400u) == 0);
      bits = sign | static_cast<std::uint32_t>(127 - 15 - e) << 23 | (mant & 0x3FFu) << 13;
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | mant << 13;
  } else {
    bits = sign | (exp + 127 - 15) << 23 | mant << 13;
  }
  return std::bit_cast<float>(bits);
}

std::uint16_t f32_to_f16(float value) noexcept {
  const std::uint32_t x = std::bit_cast<std::uint32_t>(value);
  const std::uint16_t sign = static_cast<std::uint16_t>((x >> 16) & 0x8000u);
  const std::uint32_t absx = x & 0x7FFFFFFFu;
  if (absx > 0x7F800000u) return static_cast<std::uint16_t>(sign | 0x7E00u);  // NaN
  if (absx >= 0x477FF000u) return static_cast<std::uint16_t>(sign | 0x7C00u);  // rounds to inf
  if (absx < 0x38800000u) {
    // result is subnormal or zero: scale so the f16 subnormal ulp is 1.0 and
    // let the hardware round to nearest even
    const float scaled = std::bit_cast<float>(absx) * 16777216.0f;  // 2^24
    return static_cast<std::uint16_t>(sign | static_cast<std::uint16_t>(std::nearbyint(scaled)));
  }
  const std::uint32_t exp = (absx >> 23) - 127 + 15;
  std::uint32_t mant = absx & 0x7FFFFFu;
  std::uint32_t out = exp << 10 | mant >> 13;
  const std::uint32_t rest = mant & 0x1FFFu;
  if (rest > 0x1000u || (rest == 0x1000u && (out & 1u))) ++out;  // carry may bump the exponent
  return static_cast<std::uint16_t>(sign | out);
}

std::uint64_t TensorView::element_count() const noexcept {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::uint64_t TensorView::row_count() const noexcept {
  const std::uint64_t len = row_length();
  return len == 0 ? 0 : element_count() / len;
}

}  // namespace omt::quant
