// Block quantizers follow the reference (non-imatrix) scale search used by
// the standard GGUF tooling, so K-quant output is byte-identical to theirs.
// Q8_0 differs on purpose: see quant_q8_0.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>

#include "omt/error.hpp"
#include "quant_internal.hpp"

static_assert(std::endian::native == std::endian::little, "block layouts assume a little-endian host");

namespace omt::quant::detail {
namespace {

using u8 = std::uint8_t;

constexpr float kGroupMaxEps = 1e-15f;

// Round to nearest, ties to even (the default FP environment).
inline int nearest_int(float v) noexcept { return static_cast<int>(std::lrintf(v)); }

// Affine (scale, min) search over 4/5/2-bit levels, minimizing the weighted
// error. Returns the scale and writes -min into the_min.
float make_qkx2_quants(int n, int nmax, const float* x, const float* weights, u8* L, float* the_min,
                       u8* Laux, float rmin, float rdelta, int nstep, bool use_mad) {
  float min = x[0];
  float max = x[0];
  float sum_w = weights[0];
  float sum_x = sum_w * x[0];
  for (int i = 1; i < n; ++i) {
    if (x[i] < min) min = x[i];
    if (x[i] > max) max = x[i];
    const float w = weights[i];
    sum_w += w;
    sum_x += w * x[i];
  }
  if (min > 0) min = 0;
  if (max == min) {
    for (int i = 0; i < n; ++i) L[i] = 0;
    *the_min = -min;
    return 0.f;
  }
  float iscale = nmax / (max - min);
  float scale = 1 / iscale;
  float best_error = 0;
  for (int i = 0; i < n; ++i) {
    const int l = nearest_int(iscale * (x[i] - min));
    L[i] = static_cast<u8>(std::max(0, std::min(nmax, l)));
    float diff = scale * L[i] + min - x[i];
    diff = use_mad ? std::fabs(diff) : diff * diff;
    best_error += weights[i] * diff;
  }
  if (nstep < 1) {
    *the_min = -min;
    return scale;
  }
  for (int is = 0; is <= nstep; ++is) {
    iscale = (rmin + rdelta * is + nmax) / (max - min);
    float sum_l = 0, sum_l2 = 0, sum_xl = 0;
    for (int i = 0; i < n; ++i) {
      int l = nearest_int(iscale * (x[i] - min));
      l = std::max(0, std::min(nmax, l));
      Laux[i] = static_cast<u8>(l);
      const float w = weights[i];
      sum_l += w * l;
      sum_l2 += w * l * l;
      sum_xl += w * l * x[i];
    }
    const float D = sum_w * sum_l2 - sum_l * sum_l;
    if (D > 0) {
      float this_scale = (sum_w * sum_xl - sum_x * sum_l) / D;
      float this_min = (sum_l2 * sum_x - sum_l * sum_xl) / D;
      if (this_min > 0) {
        this_min = 0;
        this_scale = sum_xl / sum_l2;
      }
      float cur_error = 0;
      for (int i = 0; i < n; ++i) {
        float diff = this_scale * Laux[i] + this_min - x[i];
        diff = use_mad ? std::fabs(diff) : diff * diff;
        cur_error += weights[i] * diff;
      }
      if (cur_error < best_error) {
        for (int i = 0; i < n; ++i) L[i] = Laux[i];
        best_error = cur_error;
        scale = this_scale;
        min = this_min;
      }
    }
  }
  *the_min = -min;
  return scale;
}

// Symmetric search used by Q6_K (rmse_type 1: weights x^2).
float make_qx_quants(int n, int nmax, const float* x, std::int8_t* L) {
  float max = 0;
  float amax = 0;
  for (int i = 0; i < n; ++i) {
    const float ax = std::fabs(x[i]);
    if (ax > amax) {
      amax = ax;
      max = x[i];
    }
  }
  if (amax < kGroupMaxEps) {
    for (int i = 0; i < n; ++i) L[i] = 0;
    return 0.f;
  }
  float iscale = -nmax / max;
  float sumlx = 0;
  float suml2 = 0;
  for (int i = 0; i < n; ++i) {
    int l = nearest_int(iscale * x[i]);
    l = std::max(-nmax, std::min(nmax - 1, l));
    L[i] = static_cast<std::int8_t>(l + nmax);
    const float w = x[i] * x[i];
    sumlx += w * x[i] * l;
    suml2 += w * l * l;
  }
  float scale = suml2 ? sumlx / suml2 : 0.0f;
  float best = scale * sumlx;
  for (int is = -9; is <= 9; ++is) {
    if (is == 0) continue;
    iscale = -(nmax + 0.1f * is) / max;
    sumlx = suml2 = 0;
    for (int i = 0; i < n; ++i) {
      int l = nearest_int(iscale * x[i]);
      l = std::max(-nmax, std::min(nmax - 1, l));
      const float w = x[i] * x[i];
      sumlx += w * x[i] * l;
      suml2 += w * l * l;
    }
    if (suml2 > 0 && sumlx * sumlx > best * suml2) {
      for (int i = 0; i < n; ++i) {
        const int l = nearest_int(iscale * x[i]);
        L[i] = static_cast<std::int8_t>(nmax + std::max(-nmax, std::min(nmax - 1, l)));
      }
      scale = sumlx / suml2;
      best = scale * sumlx;
    }
  }
  return scale;
}

// Symmetric search with coordinate-descent refinement, used by Q3_K.
float make_q3_quants(int n, int nmax, const float* x, std::int8_t* L) {
  float max = 0;
  float amax = 0;
  for (int i = 0; i < n; ++i) {
    const float ax = std::fabs(x[i]);
    if (ax > amax) {
      amax = ax;
      max = x[i];
    }
  }
  if (amax < kGroupMaxEps) {
    for (int i = 0; i < n; ++i) L[i] = 0;
    return 0.f;
  }
  const float iscale = -nmax / max;
  float sumlx = 0;
  float suml2 = 0;
  for (int i = 0; i < n; ++i) {
    int l = nearest_int(iscale * x[i]);
    l = std::max(-nmax, std::min(nmax - 1, l));
    L[i] = static_cast<std::int8_t>(l);
    const float w = x[i] * x[i];
    sumlx += w * x[i] * l;
    suml2 += w * l * l;
  }
  for (int itry = 0; itry < 5; ++itry) {
    int n_changed = 0;
    for (int i = 0; i < n; ++i) {
      const float w = x[i] * x[i];
      float slx = sumlx - w * x[i] * L[i];
      if (slx > 0) {
        float sl2 = suml2 - w * L[i] * L[i];
        int new_l = nearest_int(x[i] * sl2 / slx);
        new_l = std::max(-nmax, std::min(nmax - 1, new_l));
        if (new_l != L[i]) {
          slx += w * x[i] * new_l;
          sl2 += w * new_l * new_l;
          if (sl2 > 0 && slx * slx * suml2 > sumlx * sumlx * sl2) {
            L[i] = static_cast<std::int8_t>(new_l);
            sumlx = slx;
            suml2 = sl2;
            ++n_changed;
          }
        }
      }
    }
    if (!n_changed) break;
  }
  for (int i = 0; i < n; ++i) L[i] = static_cast<std::int8_t>(L[i] + nmax);
  return suml2 > 0.0f ? sumlx / suml2 : 0.0f;
}

// Shared by Q4_K and Q5_K: 8 sub-blocks of 32 with 6-bit scales and mins.
void quant_k_affine(const float* x, u8* b, int nmax, float rmin, int nstep, u8* L) {
  float mins[8];
  float scales[8];
  float weights[32];
  u8 Laux[32];
  float max_scale = 0;
  float max_min = 0;
  for (int j = 0; j < 8; ++j) {
    float sum_x2 = 0;
    for (int l = 0; l < 32; ++l) sum_x2 += x[32 * j + l] * x[32 * j + l];
    const float av_x = std::sqrt(sum_x2 / 32);
    for (int l = 0; l < 32; ++l) weights[l] = av_x + std::fabs(x[32 * j + l]);
    scales[j] = make_qkx2_quants(32, nmax, x + 32 * j, weights, L + 32 * j, &mins[j], Laux, rmin, 0.1f,
                                 nstep, false);
    max_scale = std::max(max_scale, scales[j]);
    max_min = std::max(max_min, mins[j]);
  }
  u8* sc = b + 4;
  std::memset(sc, 0, 12);
  const float inv_scale = max_scale > 0 ? 63.f / max_scale : 0.f;
  const float inv_min = max_min > 0 ? 63.f / max_min : 0.f;
  for (int j = 0; j < 8; ++j) {
    const u8 ls = static_cast<u8>(std::min(63, nearest_int(inv_scale * scales[j])));
    const u8 lm = static_cast<u8>(std::min(63, nearest_int(inv_min * mins[j])));
    if (j < 4) {
      sc[j] = ls;
      sc[j + 4] = lm;
    } else {
      sc[j + 4] = static_cast<u8>((ls & 0xF) | ((lm & 0xF) << 4));
      sc[j - 4] |= static_cast<u8>((ls >> 4) << 6);
      sc[j] |= static_cast<u8>((lm >> 4) << 6);
    }
  }
  store_f16(b, max_scale / 63.f);
  store_f16(b + 2, max_min / 63.f);
  const float d_all = load_f16(b);
  const float m_all = load_f16(b + 2);
  for (int j = 0; j < 8; ++j) {
    u8 s, m;
    scale_min_k4(j, sc, s, m);
    const float d = d_all * s;
    if (!d) continue;
    const float dm = m_all * m;
    for (int ii = 0; ii < 32; ++ii) {
      const int l = nearest_int((x[32 * j + ii] + dm) / d);
      L[32 * j + ii] = static_cast<u8>(std::max(0, std::min(nmax, l)));
    }
  }
}

}  // namespace

TypeInfo require_kernels(QuantType type) {
  const auto info = type_info(type);
  if (!info || !info->has_kernels) {
    fail(Errc::UnsupportedQuantType, "no kernels for " + type_name(type));
  }
  return *info;
}

void dequant_q8_0(const u8* b, float* y) noexcept {
  const float d = load_f16(b);
  const auto* qs = reinterpret_cast<const std::int8_t*>(b + 2);
  for (int i = 0; i < 32; ++i) y[i] = qs[i] * d;
}

// The scale is the largest f16 value not above absmax/127, so that
// 127*d <= absmax and no quant saturates by more than half a step. Plain
// round-to-nearest of the scale can land above absmax/127 and break the
// absmax/254 error bound; the reference tooling accepts that, we do not.
void quant_q8_0(const float* x, u8* b) noexcept {
  float amax = 0.0f;
  for (int i = 0; i < 32; ++i) amax = std::max(amax, std::fabs(x[i]));
  std::uint16_t h = f32_to_f16(amax / 127.0f);
  if ((h & 0x7FFFu) >= 0x7C00u) h = 0x7BFF;  // saturate to the largest finite value
  while (h != 0 && static_cast<double>(f16_to_f32(h)) * 127.0 > static_cast<double>(amax)) --h;
  if (h == 0 && amax > 0) h = 1;  // below f16 range: smallest subnormal
  std::memcpy(b, &h, 2);
  const float d = f16_to_f32(h);
  auto* qs = reinterpret_cast<std::int8_t*>(b + 2);
  for (int i = 0; i < 32; ++i) {
    const float q = d == 0.0f ? 0.0f : std::round(x[i] / d);  // half away from zero
    qs[i] = static_cast<std::int8_t>(std::clamp(q, -127.0f, 127.0f));
  }
}

void dequant_q2_k(const u8* b, float* y) noexcept {
  const u8* scales = b;
  const u8* q = b + 16;
  const float d = load_f16(b + 80);
  const float min = load_f16(b + 82);
  int is = 0;
  for (int n = 0; n < 256; n += 128) {
    int shift = 0;
    for (int j = 0; j < 4; ++j) {
      u8 sc = scales[is++];
      float dl = d * (sc & 0xF);
      float ml = min * (sc >> 4);
      for (int l = 0; l < 16; ++l) *y++ = dl * ((q[l] >> shift) & 3) - ml;
      sc = scales[is++];
      dl = d * (sc & 0xF);
      ml = min * (sc >> 4);
      for (int l = 0; l < 16; ++l) *y++ = dl * ((q[l + 16] >> shift) & 3) - ml;
      shift += 2;
    }
    q += 32;
  }
}

void quant_q2_k(const float* x, u8* b) noexcept {
  u8 L[256];
  u8 Laux[16];
  float weights[16];
  float mins[16];
  float scales[16];
  const float q4scale = 15.f;
  float max_scale = 0;
  float max_min = 0;
  for (int j = 0; j < 16; ++j) {
    for (int l = 0; l < 16; ++l) weights[l] = std::fabs(x[16 * j + l]);
    scales[j] =
        make_qkx2_quants(16, 3, x + 16 * j, weights, L + 16 * j, &mins[j], Laux, -0.5f, 0.1f, 15, true);
    max_scale = std::max(max_scale, scales[j]);
    max_min = std::max(max_min, mins[j]);
  }
  u8* sc = b;
  u8* qs = b + 16;
  if (max_scale > 0) {
    const float iscale = q4scale / max_scale;
    for (int j = 0; j < 16; ++j) sc[j] = static_cast<u8>(nearest_int(iscale * scales[j]));
    store_f16(b + 80, max_scale / q4scale);
  } else {
    for (int j = 0; j < 16; ++j) sc[j] = 0;
    store_f16(b + 80, 0.f);
  }
  if (max_min > 0) {
    const float iscale = q4scale / max_min;
    for (int j = 0; j < 16; ++j) sc[j] |= static_cast<u8>(nearest_int(iscale * mins[j]) << 4);
    store_f16(b + 82, max_min / q4scale);
  } else {
    store_f16(b + 82, 0.f);
  }
  const float d_all = load_f16(b + 80);
  const float m_all = load_f16(b + 82);
  for (int j = 0; j < 16; ++j) {
    const float d = d_all * (sc[j] & 0xF);
    if (!d) continue;
    const float dm = m_all * (sc[j] >> 4);
    for (int ii = 0; ii < 16; ++ii) {
      const int l = nearest_int((x[16 * j + ii] + dm) / d);
      L[16 * j + ii] = static_cast<u8>(std::max(0, std::min(3, l)));
    }
  }
  for (int j = 0; j < 256; j += 128) {
    for (int l = 0; l < 32; ++l) {
      qs[j / 4 + l] =
          static_cast<u8>(L[j + l] | (L[j + l + 32] << 2) | (L[j + l + 64] << 4) | (L[j + l + 96] << 6));
    }
  }
}

void dequant_q3_k(const u8* b, float* y) noexcept {
  const u8* hm = b;
  const u8* q = b + 32;
  const u8* s = b + 96;
  const float d_all = load_f16(b + 108);
  int is = 0;
  u8 m = 1;
  for (int n = 0; n < 256; n += 128) {
    int shift = 0;
    for (int j = 0; j < 4; ++j) {
      float dl = d_all * q3_scale(is++, s);
      for (int l = 0; l < 16; ++l) *y++ = dl * (((q[l] >> shift) & 3) - ((hm[l] & m) ? 0 : 4));
      dl = d_all * q3_scale(is++, s);
      for (int l = 0; l < 16; ++l) *y++ = dl * (((q[l + 16] >> shift) & 3) - ((hm[l + 16] & m) ? 0 : 4));
      shift += 2;
      m = static_cast<u8>(m << 1);
    }
    q += 32;
  }
}

void quant_q3_k(const float* x, u8* b) noexcept {
  std::int8_t L[256];
  float scales[16];
  float max_scale = 0;
  float amax = 0;
  for (int j = 0; j < 16; ++j) {
    scales[j] = make_q3_quants(16, 4, x + 16 * j, L + 16 * j);
    const float scale = std::fabs(scales[j]);
    if (scale > amax) {
      amax = scale;
      max_scale = scales[j];
    }
  }
  u8* hmask = b;
  u8* qs = b + 32;
  u8* s = b + 96;
  std::memset(s, 0, 12);
  if (max_scale) {
    const float iscale = -32.f / max_scale;
    for (int j = 0; j < 16; ++j) {
      int l = nearest_int(iscale * scales[j]);
      l = std::max(-32, std::min(31, l)) + 32;
      if (j < 8) {
        s[j] = static_cast<u8>(l & 0xF);
      } else {
        s[j - 8] |= static_cast<u8>((l & 0xF) << 4);
      }
      l >>= 4;
      s[j % 4 + 8] |= static_cast<u8>(l << (2 * (j / 4)));
    }
    store_f16(b + 108, 1 / iscale);
  } else {
    store_f16(b + 108, 0.f);
  }
  const float d_all = load_f16(b + 108);
  for (int j = 0; j < 16; ++j) {
    const float d = d_all * q3_scale(j, s);
    if (!d) continue;
    for (int ii = 0; ii < 16; ++ii) {
      int l = nearest_int(x[16 * j + ii] / d);
      l = std::max(-4, std::min(3, l));
      L[16 * j + ii] = static_cast<std::int8_t>(l + 4);
    }
  }
  std::memset(hmask, 0, 32);
  int m = 0;
  u8 hm = 1;
  for (int j = 0; j < 256; ++j) {
    if (L[j] > 3) {
      hmask[m] |= hm;
      L[j] = static_cast<std::int8_t>(L[j] - 4);
    }
    if (++m == 32) {
      m = 0;
      hm = static_cast<u8>(hm << 1);
    }
  }
  for (int j = 0; j < 256; j += 128) {
    for (int l = 0; l < 32; ++l) {
      qs[j / 4 + l] =
          static_cast<u8>(L[j + l] | (L[j + l + 32] << 2) | (L[j + l + 64] << 4) | (L[j + l + 96] << 6));
    }
  }
}

void dequant_q4_k(const u8* b, float* y) noexcept {
  const float d = load_f16(b);
  const float min = load_f16(b + 2);
  const u8* scales = b + 4;
  const u8* q = b + 16;
  int is = 0;
  for (int j = 0; j < 256; j += 64) {
    u8 sc, m;
    scale_min_k4(is, scales, sc, m);
    const float d1 = d * sc;
    const float m1 = min * m;
    scale_min_k4(is + 1, scales, sc, m);
    const float d2 = d * sc;
    const float m2 = min * m;
    for (int l = 0; l < 32; ++l) *y++ = d1 * (q[l] & 0xF) - m1;
    for (int l = 0; l < 32; ++l) *y++ = d2 * (q[l] >> 4) - m2;
    q += 32;
    is += 2;
  }
}

void quant_q4_k(const float* x, u8* b) noexcept {
  u8 L[256];
  quant_k_affine(x, b, 15, -1.f, 20, L);
  u8* q = b + 16;
  for (int j = 0; j < 256; j += 64) {
    for (int l = 0; l < 32; ++l) q[l] = static_cast<u8>(L[j + l] | (L[j + l + 32] << 4));
    q += 32;
  }
}

void dequant_q5_k(const u8* b, float* y) noexcept {
  const float d = load_f16(b);
  const float min = load_f16(b + 2);
  const u8* scales = b + 4;
  const u8* qh = b + 16;
  const u8* ql = b + 48;
  int is = 0;
  u8 u1 = 1, u2 = 2;
  for (int j = 0; j < 256; j += 64) {
    u8 sc, m;
    scale_min_k4(is, scales, sc, m);
    const float d1 = d * sc;
    const float m1 = min * m;
    scale_min_k4(is + 1, scales, sc, m);
    const float d2 = d * sc;
    const float m2 = min * m;
    for (int l = 0; l < 32; ++l) *y++ = d1 * ((ql[l] & 0xF) + (qh[l] & u1 ? 16 : 0)) - m1;
    for (int l = 0; l < 32; ++l) *y++ = d2 * ((ql[l] >> 4) + (qh[l] & u2 ? 16 : 0)) - m2;
    ql += 32;
    is += 2;
    u1 = static_cast<u8>(u1 << 2);
    u2 = static_cast<u8>(u2 << 2);
  }
}

void quant_q5_k(const float* x, u8* b) noexcept {
  u8 L[256];
  quant_k_affine(x, b, 31, -0.5f, 15, L);
  u8* qh = b + 16;
  u8* ql = b + 48;
  std::memset(qh, 0, 32);
  u8 m1 = 1, m2 = 2;
  for (int n = 0; n < 256; n += 64) {
    for (int j = 0; j < 32; ++j) {
      int l1 = L[n + j];
      if (l1 > 15) {
        l1 -= 16;
        qh[j] |= m1;
      }
      int l2 = L[n + j + 32];
      if (l2 > 15) {
        l2 -= 16;
        qh[j] |= m2;
      }
      ql[j] = static_cast<u8>(l1 | (l2 << 4));
    }
    m1 = static_cast<u8>(m1 << 2);
    m2 = static_cast<u8>(m2 << 2);
    ql += 32;
  }
}

void dequant_q6_k(const u8* b, float* y) noexcept {
  const u8* ql = b;
  const u8* qh = b + 128;
  const auto* sc = reinterpret_cast<const std::int8_t*>(b + 192);
  const float d = load_f16(b + 208);
  for (int n = 0; n < 256; n += 128) {
    for (int l = 0; l < 32; ++l) {
      const int is = l / 16;
      const int q1 = ((ql[l] & 0xF) | (((qh[l] >> 0) & 3) << 4)) - 32;
      const int q2 = ((ql[l + 32] & 0xF) | (((qh[l] >> 2) & 3) << 4)) - 32;
      const int q3 = ((ql[l] >> 4) | (((qh[l] >> 4) & 3) << 4)) - 32;
      const int q4 = ((ql[l + 32] >> 4) | (((qh[l] >> 6) & 3) << 4)) - 32;
      y[l] = d * sc[is] * q1;
      y[l + 32] = d * sc[is + 2] * q2;
      y[l + 64] = d * sc[is + 4] * q3;
      y[l + 96] = d * sc[is + 6] * q4;
    }
    y += 128;
    ql += 64;
    qh += 32;
    sc += 8;
  }
}

void quant_q6_k(const float* x, u8* b) noexcept {
  std::int8_t L[256];
  float scales[16];
  float max_scale = 0;
  float max_abs_scale = 0;
  for (int ib = 0; ib < 16; ++ib) {
    const float scale = make_qx_quants(16, 32, x + 16 * ib, L + 16 * ib);
    scales[ib] = scale;
    const float abs_scale = std::fabs(scale);
    if (abs_scale > max_abs_scale) {
      max_abs_scale = abs_scale;
      max_scale = scale;
    }
  }
  std::memset(b, 0, 210);
  if (max_abs_scale < kGroupMaxEps) {
    store_f16(b + 208, 0.f);
    return;
  }
  auto* sc = reinterpret_cast<std::int8_t*>(b + 192);
  const float iscale = -128.f / max_scale;
  store_f16(b + 208, 1 / iscale);
  for (int ib = 0; ib < 16; ++ib) {
    sc[ib] = static_cast<std::int8_t>(std::min(127, nearest_int(iscale * scales[ib])));
  }
  const float d_all = load_f16(b + 208);
  for (int j = 0; j < 16; ++j) {
    const float d = d_all * sc[j];
    if (!d) continue;
    for (int ii = 0; ii < 16; ++ii) {
      int l = nearest_int(x[16 * j + ii] / d);
      l = std::max(-32, std::min(31, l));
      L[16 * j + ii] = static_cast<std::int8_t>(l + 32);
    }
  }
  u8* ql = b;
  u8* qh = b + 128;
  for (int j = 0; j < 256; j += 128) {
    for (int l = 0; l < 32; ++l) {
      const u8 q1 = L[j + l] & 0xF;
      const u8 q2 = L[j + l + 32] & 0xF;
      const u8 q3 = L[j + l + 64] & 0xF;
      const u8 q4 = L[j + l + 96] & 0xF;
      ql[l] = static_cast<u8>(q1 | (q3 << 4));
      ql[l + 32] = static_cast<u8>(q2 | (q4 << 4));
      qh[l] = static_cast<u8>((L[j + l] >> 4) | ((L[j + l + 32] >> 4) << 2) | ((L[j + l + 64] >> 4) << 4) |
                              ((L[j + l + 96] >> 4) << 6));
    }
    ql += 64;
    qh += 32;
  }
}

}  // namespace omt::quant::detail
