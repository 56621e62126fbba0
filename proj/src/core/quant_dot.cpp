#include <cstring>

#if defined(__AVX2__) && defined(__FMA__) && defined(__F16C__)
#include <immintrin.h>
#define OMT_AVX2 1
#endif

#include "omt/error.hpp"
#include "quant_internal.hpp"

namespace omt::quant {
namespace {

using u8 = std::uint8_t;

// Generic path: expand one block to floats and dot it.
template <void (*Dequant)(const u8*, float*), int Elems, int Bytes>
[[maybe_unused]] float dot_blocks(const u8* row, const float* a, std::size_t n) {
  float tmp[Elems];
  float total = 0.0f;
  for (std::size_t i = 0; i < n / Elems; ++i) {
    Dequant(row + i * Bytes, tmp);
    float part = 0.0f;
    for (int k = 0; k < Elems; ++k) part += tmp[k] * a[i * Elems + k];
    total += part;
  }
  return total;
}

[[maybe_unused]] float dot_q4_k_scalar(const u8* row, const float* a, const float* sums, std::size_t n) {
  float total = 0.0f;
  for (std::size_t i = 0; i < n / 256; ++i) {
    const u8* b = row + i * 144;
    const float d = detail::load_f16(b);
    const float dmin = detail::load_f16(b + 2);
    const u8* q = b + 16;
    float part = 0.0f;
    for (int c = 0; c < 4; ++c) {
      u8 sc1, m1, sc2, m2;
      detail::scale_min_k4(2 * c, b + 4, sc1, m1);
      detail::scale_min_k4(2 * c + 1, b + 4, sc2, m2);
      const float* x = a + i * 256 + c * 64;
      float lo = 0.0f, hi = 0.0f;
      for (int l = 0; l < 32; ++l) {
        lo += static_cast<float>(q[l] & 0xF) * x[l];
        hi += static_cast<float>(q[l] >> 4) * x[l + 32];
      }
      const std::size_t g = i * 8 + 2 * c;
      part += d * sc1 * lo - dmin * m1 * sums[g] + d * sc2 * hi - dmin * m2 * sums[g + 1];
      q += 32;
    }
    total += part;
  }
  return total;
}

#ifdef OMT_AVX2

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  const __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  return _mm_cvtss_f32(_mm_add_ss(lo, sh));
}

inline __m256i load8_u8(const u8* p) {
  return _mm256_cvtepu8_epi32(_mm_loadl_epi64(reinterpret_cast<const __m128i*>(p)));
}

float dot_f32(const float* w, const float* a, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_fmadd_ps(_mm256_loadu_ps(w + i), _mm256_loadu_ps(a + i), acc);
  float total = hsum(acc);
  for (; i < n; ++i) total += w[i] * a[i];
  return total;
}

float dot_f16(const u8* w, const float* a, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 wf = _mm256_cvtph_ps(_mm_loadu_si128(reinterpret_cast<const __m128i*>(w + 2 * i)));
    acc = _mm256_fmadd_ps(wf, _mm256_loadu_ps(a + i), acc);
  }
  float total = hsum(acc);
  for (; i < n; ++i) total += detail::load_f16(w + 2 * i) * a[i];
  return total;
}

float dot_q8_0(const u8* row, const float* a, std::size_t n) {
  __m256 total = _mm256_setzero_ps();
  for (std::size_t i = 0; i < n / 32; ++i) {
    const u8* b = row + i * 34;
    const float* x = a + i * 32;
    __m256 acc = _mm256_setzero_ps();
    for (int k = 0; k < 4; ++k) {
      const __m256i q =
          _mm256_cvtepi8_epi32(_mm_loadl_epi64(reinterpret_cast<const __m128i*>(b + 2 + 8 * k)));
      acc = _mm256_fmadd_ps(_mm256_cvtepi32_ps(q), _mm256_loadu_ps(x + 8 * k), acc);
    }
    total = _mm256_fmadd_ps(_mm256_set1_ps(detail::load_f16(b)), acc, total);
  }
  return hsum(total);
}

float dot_q4_k(const u8* row, const float* a, const float* sums, std::size_t n) {
  const __m256i mask = _mm256_set1_epi32(0xF);
  __m256 total = _mm256_setzero_ps();
  float min_total = 0.0f;
  for (std::size_t i = 0; i < n / 256; ++i) {
    const u8* b = row + i * 144;
    const float d = detail::load_f16(b);
    const float dmin = detail::load_f16(b + 2);
    const u8* q = b + 16;
    float min_part = 0.0f;
    for (int c = 0; c < 4; ++c) {
      u8 sc1, m1, sc2, m2;
      detail::scale_min_k4(2 * c, b + 4, sc1, m1);
      detail::scale_min_k4(2 * c + 1, b + 4, sc2, m2);
      const float* x = a + i * 256 + c * 64;
      __m256 lo = _mm256_setzero_ps();
      __m256 hi = _mm256_setzero_ps();
      for (int k = 0; k < 4; ++k) {
        const __m256i v = load8_u8(q + 8 * k);
        lo = _mm256_fmadd_ps(_mm256_cvtepi32_ps(_mm256_and_si256(v, mask)), _mm256_loadu_ps(x + 8 * k), lo);
        hi = _mm256_fmadd_ps(_mm256_cvtepi32_ps(_mm256_srli_epi32(v, 4)), _mm256_loadu_ps(x + 32 + 8 * k), hi);
      }
      total = _mm256_fmadd_ps(_mm256_set1_ps(d * sc1), lo, total);
      total = _mm256_fmadd_ps(_mm256_set1_ps(d * sc2), hi, total);
      const std::size_t g = i * 8 + 2 * c;
      min_part += m1 * sums[g] + m2 * sums[g + 1];
      q += 32;
    }
    min_total += dmin * min_part;
  }
  return hsum(total) - min_total;
}

float dot_q5_k(const u8* row, const float* a, const float* sums, std::size_t n) {
  const __m256i mask = _mm256_set1_epi32(0xF);
  const __m256i one = _mm256_set1_epi32(1);
  __m256 total = _mm256_setzero_ps();
  float min_total = 0.0f;
  for (std::size_t i = 0; i < n / 256; ++i) {
    const u8* b = row + i * 176;
    const float d = detail::load_f16(b);
    const float dmin = detail::load_f16(b + 2);
    const u8* qh = b + 16;
    const u8* ql = b + 48;
    float min_part = 0.0f;
    for (int c = 0; c < 4; ++c) {
      u8 sc1, m1, sc2, m2;
      detail::scale_min_k4(2 * c, b + 4, sc1, m1);
      detail::scale_min_k4(2 * c + 1, b + 4, sc2, m2);
      const float* x = a + i * 256 + c * 64;
      __m256 lo = _mm256_setzero_ps();
      __m256 hi = _mm256_setzero_ps();
      for (int k = 0; k < 4; ++k) {
        const __m256i v = load8_u8(ql + 8 * k);
        const __m256i h = load8_u8(qh + 8 * k);
        const __m256i hl = _mm256_slli_epi32(_mm256_and_si256(_mm256_srli_epi32(h, 2 * c), one), 4);
        const __m256i hh = _mm256_slli_epi32(_mm256_and_si256(_mm256_srli_epi32(h, 2 * c + 1), one), 4);
        const __m256i ql_lo = _mm256_or_si256(_mm256_and_si256(v, mask), hl);
        const __m256i ql_hi = _mm256_or_si256(_mm256_srli_epi32(v, 4), hh);
        lo = _mm256_fmadd_ps(_mm256_cvtepi32_ps(ql_lo), _mm256_loadu_ps(x + 8 * k), lo);
        hi = _mm256_fmadd_ps(_mm256_cvtepi32_ps(ql_hi), _mm256_loadu_ps(x + 32 + 8 * k), hi);
      }
      total = _mm256_fmadd_ps(_mm256_set1_ps(d * sc1), lo, total);
      total = _mm256_fmadd_ps(_mm256_set1_ps(d * sc2), hi, total);
      const std::size_t g = i * 8 + 2 * c;
      min_part += m1 * sums[g] + m2 * sums[g + 1];
      ql += 32;
    }
    min_total += dmin * min_part;
  }
  return hsum(total) - min_total;
}

float dot_q6_k(const u8* row, const float* a, std::size_t n) {
  const __m256i m4 = _mm256_set1_epi32(0xF);
  const __m256i m2 = _mm256_set1_epi32(3);
  const __m256i off = _mm256_set1_epi32(32);
  __m256 total = _mm256_setzero_ps();
  for (std::size_t i = 0; i < n / 256; ++i) {
    const u8* b = row + i * 210;
    const u8* ql = b;
    const u8* qh = b + 128;
    const auto* sc = reinterpret_cast<const std::int8_t*>(b + 192);
    const float* x = a + i * 256;
    __m256 acc = _mm256_setzero_ps();
    for (int half = 0; half < 2; ++half) {
      for (int l = 0; l < 32; l += 8) {
        const int is = l / 16;
        const __m256i a0 = load8_u8(ql + l);
        const __m256i a1 = load8_u8(ql + l + 32);
        const __m256i h = load8_u8(qh + l);
        const __m256i q1 = _mm256_sub_epi32(
            _mm256_or_si256(_mm256_and_si256(a0, m4), _mm256_slli_epi32(_mm256_and_si256(h, m2), 4)), off);
        const __m256i q2 = _mm256_sub_epi32(
            _mm256_or_si256(_mm256_and_si256(a1, m4),
                            _mm256_slli_epi32(_mm256_and_si256(_mm256_srli_epi32(h, 2), m2), 4)),
            off);
        const __m256i q3 = _mm256_sub_epi32(
            _mm256_or_si256(_mm256_srli_epi32(a0, 4),
                            _mm256_slli_epi32(_mm256_and_si256(_mm256_srli_epi32(h, 4), m2), 4)),
            off);
        const __m256i q4 = _mm256_sub_epi32(
            _mm256_or_si256(_mm256_srli_epi32(a1, 4), _mm256_slli_epi32(_mm256_srli_epi32(h, 6), 4)), off);
        const __m256 p1 = _mm256_mul_ps(_mm256_cvtepi32_ps(q1), _mm256_loadu_ps(x + l));
        const __m256 p2 = _mm256_mul_ps(_mm256_cvtepi32_ps(q2), _mm256_loadu_ps(x + l + 32));
        const __m256 p3 = _mm256_mul_ps(_mm256_cvtepi32_ps(q3), _mm256_loadu_ps(x + l + 64));
        const __m256 p4 = _mm256_mul_ps(_mm256_cvtepi32_ps(q4), _mm256_loadu_ps(x + l + 96));
        acc = _mm256_fmadd_ps(_mm256_set1_ps(sc[is]), p1, acc);
        acc = _mm256_fmadd_ps(_mm256_set1_ps(sc[is + 2]), p2, acc);
        acc = _mm256_fmadd_ps(_mm256_set1_ps(sc[is + 4]), p3, acc);
        acc = _mm256_fmadd_ps(_mm256_set1_ps(sc[is + 6]), p4, acc);
      }
      ql += 64;
      qh += 32;
      sc += 8;
      x += 128;
    }
    total = _mm256_fmadd_ps(_mm256_set1_ps(detail::load_f16(b + 208)), acc, total);
  }
  return hsum(total);
}

#else

float dot_f32(const float* w, const float* a, std::size_t n) {
  float total = 0.0f;
  for (std::size_t i = 0; i < n; ++i) total += w[i] * a[i];
  return total;
}

float dot_f16(const u8* w, const float* a, std::size_t n) {
  float total = 0.0f;
  for (std::size_t i = 0; i < n; ++i) total += detail::load_f16(w + 2 * i) * a[i];
  return total;
}

float dot_q8_0(const u8* row, const float* a, std::size_t n) {
  return dot_blocks<detail::dequant_q8_0, 32, 34>(row, a, n);
}

float dot_q4_k(const u8* row, const float* a, const float* sums, std::size_t n) {
  return dot_q4_k_scalar(row, a, sums, n);
}

float dot_q5_k(const u8* row, const float* a, const float*, std::size_t n) {
  return dot_blocks<detail::dequant_q5_k, 256, 176>(row, a, n);
}

float dot_q6_k(const u8* row, const float* a, std::size_t n) {
  return dot_blocks<detail::dequant_q6_k, 256, 210>(row, a, n);
}

#endif

}  // namespace

Activation::Activation(std::span<const float> values) : values_(values), sums32_(values.size() / 32) {
  for (std::size_t g = 0; g < sums32_.size(); ++g) {
    float s = 0.0f;
    for (int k = 0; k < 32; ++k) s += values[g * 32 + k];
    sums32_[g] = s;
  }
}

float dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) fail(Errc::LengthMismatch, "dot of vectors with different lengths");
  return dot_f32(a.data(), b.data(), a.size());
}

float dot_q(QuantType type, std::span<const std::byte> row, std::span<const float> activation) {
  return dot_q(type, row, Activation(activation));
}

float dot_q(QuantType type, std::span<const std::byte> row, const Activation& activation) {
  const TypeInfo info = detail::require_kernels(type);
  const std::size_t n = activation.values().size();
  if (n % info.block_elems != 0 || row.size() != n / info.block_elems * info.block_bytes) {
    fail(Errc::GeometryMismatch, std::string(info.name) + " row of " + std::to_string(row.size()) +
                                     " bytes does not match an activation of " + std::to_string(n));
  }
  const auto* w = reinterpret_cast<const u8*>(row.data());
  const float* a = activation.values().data();
  switch (type) {
    case QuantType::F32: {
      float tmp[64];
      float total = 0.0f;
      // row bytes may be unaligned for float loads; copy through a buffer
      for (std::size_t i = 0; i < n; i += 64) {
        const std::size_t m = std::min<std::size_t>(64, n - i);
        std::memcpy(tmp, w + 4 * i, 4 * m);
        total += dot_f32(tmp, a + i, m);
      }
      return total;
    }
    case QuantType::F16:
      return dot_f16(w, a, n);
    case QuantType::Q8_0:
      return dot_q8_0(w, a, n);
    case QuantType::Q2_K:
      return dot_blocks<detail::dequant_q2_k, 256, 84>(w, a, n);
    case QuantType::Q3_K:
      return dot_blocks<detail::dequant_q3_k, 256, 110>(w, a, n);
    case QuantType::Q4_K:
      return dot_q4_k(w, a, activation.group_sums().data(), n);
    case QuantType::Q5_K:
      return dot_q5_k(w, a, activation.group_sums().data(), n);
    case QuantType::Q6_K:
      return dot_q6_k(w, a, n);
    default:
      fail(Errc::UnsupportedQuantType, "no kernels for " + type_name(type));
  }
}

}  // namespace omt::quant
