#include <cmath>
#include <cstring>

#include "omt/error.hpp"
#include "quant_internal.hpp"

namespace omt::quant {
namespace {

using detail::require_kernels;

void dequant_one(QuantType type, const std::uint8_t* b, float* y) {
  switch (type) {
    case QuantType::F32:
      std::memcpy(y, b, 4);
      return;
    case QuantType::F16:
      *y = detail::load_f16(b);
      return;
    case QuantType::Q8_0:
      return detail::dequant_q8_0(b, y);
    case QuantType::Q2_K:
      return detail::dequant_q2_k(b, y);
    case QuantType::Q3_K:
      return detail::dequant_q3_k(b, y);
    case QuantType::Q4_K:
      return detail::dequant_q4_k(b, y);
    case QuantType::Q5_K:
      return detail::dequant_q5_k(b, y);
    case QuantType::Q6_K:
      return detail::dequant_q6_k(b, y);
    default:
      fail(Errc::UnsupportedQuantType, "no kernels for " + type_name(type));
  }
}

void quant_one(QuantType type, const float* x, std::uint8_t* b) {
  switch (type) {
    case QuantType::F32:
      std::memcpy(b, x, 4);
      return;
    case QuantType::F16:
      detail::store_f16(b, *x);
      return;
    case QuantType::Q8_0:
      return detail::quant_q8_0(x, b);
    case QuantType::Q2_K:
      return detail::quant_q2_k(x, b);
    case QuantType::Q3_K:
      return detail::quant_q3_k(x, b);
    case QuantType::Q4_K:
      return detail::quant_q4_k(x, b);
    case QuantType::Q5_K:
      return detail::quant_q5_k(x, b);
    case QuantType::Q6_K:
      return detail::quant_q6_k(x, b);
    default:
      fail(Errc::UnsupportedQuantType, "no kernels for " + type_name(type));
  }
}

const std::uint8_t* as_u8(std::span<const std::byte> s) {
  return reinterpret_cast<const std::uint8_t*>(s.data());
}

void require_finite(std::span<const float> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      fail(Errc::NonFiniteInput, "non-finite value at index " + std::to_string(i));
    }
  }
}

}  // namespace

void dequantize_block(QuantType type, std::span<const std::byte> raw, std::span<float> out) {
  const TypeInfo info = require_kernels(type);
  if (raw.size() != info.block_bytes || out.size() != info.block_elems) {
    fail(Errc::GeometryMismatch, std::string(info.name) + " block needs " + std::to_string(info.block_bytes) +
                                     " bytes, got " + std::to_string(raw.size()));
  }
  dequant_one(type, as_u8(raw), out.data());
}

std::vector<float> dequantize_block(QuantType type, std::span<const std::byte> raw) {
  const TypeInfo info = require_kernels(type);
  std::vector<float> out(info.block_elems);
  dequantize_block(type, raw, out);
  return out;
}

std::vector<std::byte> quantize_block(std::span<const float> values, QuantType type) {
  const TypeInfo info = require_kernels(type);
  if (values.size() != info.block_elems) {
    fail(Errc::GeometryMismatch, std::string(info.name) + " block holds " + std::to_string(info.block_elems) +
                                     " values, got " + std::to_string(values.size()));
  }
  require_finite(values);
  std::vector<std::byte> out(info.block_bytes);
  quant_one(type, values.data(), reinterpret_cast<std::uint8_t*>(out.data()));
  return out;
}

void dequantize_row(QuantType type, std::span<const std::byte> raw, std::span<float> out) {
  const TypeInfo info = require_kernels(type);
  if (out.size() % info.block_elems != 0 ||
      raw.size() != out.size() / info.block_elems * info.block_bytes) {
    fail(Errc::GeometryMismatch, std::to_string(raw.size()) + " bytes of " + std::string(info.name) +
                                     " do not hold " + std::to_string(out.size()) + " values");
  }
  const std::size_t nb = out.size() / info.block_elems;
  const std::uint8_t* src = as_u8(raw);
  if (type == QuantType::F32) {
    std::memcpy(out.data(), src, raw.size());
    return;
  }
  for (std::size_t i = 0; i < nb; ++i) {
    dequant_one(type, src + i * info.block_bytes, out.data() + i * info.block_elems);
  }
}

void quantize_row(QuantType type, std::span<const float> values, std::span<std::byte> out) {
  const TypeInfo info = require_kernels(type);
  if (values.size() % info.block_elems != 0 ||
      out.size() != values.size() / info.block_elems * info.block_bytes) {
    fail(Errc::GeometryMismatch, std::to_string(values.size()) + " values do not fill whole " +
                                     std::string(info.name) + " blocks");
  }
  require_finite(values);
  const std::size_t nb = values.size() / info.block_elems;
  auto* dst = reinterpret_cast<std::uint8_t*>(out.data());
  for (std::size_t i = 0; i < nb; ++i) {
    quant_one(type, values.data() + i * info.block_elems, dst + i * info.block_bytes);
  }
}

std::vector<std::byte> quantize(QuantType type, std::span<const float> values) {
  const TypeInfo info = require_kernels(type);
  if (values.size() % info.block_elems != 0) {
    fail(Errc::GeometryMismatch, std::to_string(values.size()) + " values do not fill whole " +
                                     std::string(info.name) + " blocks");
  }
  std::vector<std::byte> out(values.size() / info.block_elems * info.block_bytes);
  quantize_row(type, values, out);
  return out;
}

std::vector<float> dequantize_tensor(const TensorView& view) {
  const TypeInfo info = require_kernels(view.type);
  if (view.row_length() % info.block_elems != 0) {
    fail(Errc::GeometryMismatch, view.name + ": row length " + std::to_string(view.row_length()) +
                                     " is not a multiple of " + std::to_string(info.block_elems));
  }
  const std::uint64_t n = view.element_count();
  if (view.data.size() != byte_size(view.type, n)) {
    fail(Errc::GeometryMismatch, view.name + ": payload is " + std::to_string(view.data.size()) +
                                     " bytes, dims imply " + std::to_string(byte_size(view.type, n)));
  }
  std::vector<float> out(n);
  dequantize_row(view.type, view.data, out);
  return out;
}

QuantErrorStats quant_error_report(std::span<const float> original, QuantType type) {
  const TypeInfo info = require_kernels(type);
  const std::vector<std::byte> packed = quantize(type, original);
  std::vector<float> restored(original.size());
  dequantize_row(type, packed, restored);
  QuantErrorStats stats;
  stats.bits_rank = info.bits_rank;
  double sq = 0.0;
  for (std::size_t i = 0; i < original.size(); ++i) {
    const double e = std::fabs(static_cast<double>(original[i]) - restored[i]);
    sq += e * e;
    stats.max_abs_error = std::max(stats.max_abs_error, e);
  }
  stats.rms_error = original.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(original.size()));
  return stats;
}

}  // namespace omt::quant
