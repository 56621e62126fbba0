#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Block quantization formats used by GGUF weight tensors.
//
// Block layouts are byte-compatible with the ggml definitions:
//   Q8_0  34 B / 32:  f16 d | int8 qs[32]
//   Q2_K  84 B / 256: u8 scales[16] | u8 qs[64] | f16 d | f16 dmin
//   Q3_K 110 B / 256: u8 hmask[32] | u8 qs[64] | u8 scales[12] | f16 d
//   Q4_K 144 B / 256: f16 d | f16 dmin | u8 scales[12] | u8 qs[128]
//   Q5_K 176 B / 256: f16 d | f16 dmin | u8 scales[12] | u8 qh[32] | u8 qs[128]
//   Q6_K 210 B / 256: u8 ql[128] | u8 qh[64] | i8 scales[16] | f16 d
// All multi-byte fields are little-endian.
namespace omt::quant {

// Values are the on-disk type ids. Ids outside the table are carried through
// as opaque tensors.
enum class QuantType : std::uint32_t {
  F32 = 0,
  F16 = 1,
  Q4_0 = 2,
  Q4_1 = 3,
  Q5_0 = 6,
  Q5_1 = 7,
  Q8_0 = 8,
  Q8_1 = 9,
  Q2_K = 10,
  Q3_K = 11,
  Q4_K = 12,
  Q5_K = 13,
  Q6_K = 14,
  Q8_K = 15,
  IQ2_XXS = 16,
  IQ2_XS = 17,
  IQ3_XXS = 18,
  IQ1_S = 19,
  IQ4_NL = 20,
  IQ3_S = 21,
  IQ2_S = 22,
  IQ4_XS = 23,
  I8 = 24,
  I16 = 25,
  I32 = 26,
  I64 = 27,
  F64 = 28,
  IQ1_M = 29,
  BF16 = 30,
  TQ1_0 = 34,
  TQ2_0 = 35,
  MXFP4 = 39,
};

inline constexpr std::uint32_t kSuperBlock = 256;

struct TypeInfo {
  std::string_view name;
  std::uint32_t block_elems;
  std::uint32_t block_bytes;
  bool has_kernels;  // quantize/dequantize/dot implemented here
  int bits_rank;     // position on the precision ladder, 0 when not ranked
};

// nullopt for ids this build does not know (opaque tensors).
std::optional<TypeInfo> type_info(QuantType type) noexcept;
bool has_kernels(QuantType type) noexcept;
std::string type_name(QuantType type);
std::optional<QuantType> parse_type_name(std::string_view name) noexcept;
// Types with full kernel support, ordered from fewest to most bits.
std::span<const QuantType> supported_types() noexcept;

// Exact byte size of `n_elems` values laid out in blocks of `type`.
// Throws GeometryMismatch when n_elems is not a whole number of blocks and
// UnsupportedQuantType for opaque ids.
std::uint64_t byte_size(QuantType type, std::uint64_t n_elems);

// IEEE 754 binary16 <-> binary32, round-to-nearest-even on narrowing.
float f16_to_f32(std::uint16_t bits) noexcept;
std::uint16_t f32_to_f16(float value) noexcept;

struct TensorView {
  std::string name;
  QuantType type = QuantType::F32;
  std::vector<std::uint64_t> dims;  // dims[0] is the contiguous (row) extent
  std::span<const std::byte> data;

  std::uint64_t element_count() const noexcept;
  std::uint64_t row_length() const noexcept { return dims.empty() ? 1 : dims[0]; }
  std::uint64_t row_count() const noexcept;
};

std::vector<float> dequantize_block(QuantType type, std::span<const std::byte> raw);
void dequantize_block(QuantType type, std::span<const std::byte> raw, std::span<float> out);
std::vector<std::byte> quantize_block(std::span<const float> values, QuantType type);

// Row-level (any whole number of blocks).
void dequantize_row(QuantType type, std::span<const std::byte> raw, std::span<float> out);
void quantize_row(QuantType type, std::span<const float> values, std::span<std::byte> out);
std::vector<std::byte> quantize(QuantType type, std::span<const float> values);

std::vector<float> dequantize_tensor(const TensorView& view);

// Activation prepared once for many dot products against rows of one matrix.
class Activation {
 public:
  explicit Activation(std::span<const float> values);
  std::span<const float> values() const noexcept { return values_; }
  // Sum of each consecutive group of 32 values.
  std::span<const float> group_sums() const noexcept { return sums32_; }

 private:
  std::span<const float> values_;
  std::vector<float> sums32_;
};

// Fused dequantize-and-dot. Accumulates in float32 with one partial sum per
// block, combined in block order.
float dot_q(QuantType type, std::span<const std::byte> row, std::span<const float> activation);
float dot_q(QuantType type, std::span<const std::byte> row, const Activation& activation);

// Plain float dot product with the same SIMD accumulation as the F32 path.
float dot(std::span<const float> a, std::span<const float> b);

struct QuantErrorStats {
  double rms_error = 0.0;
  double max_abs_error = 0.0;
  int bits_rank = 0;
};

QuantErrorStats quant_error_report(std::span<const float> original, QuantType type);

}  // namespace omt::quant
