#include "oracles.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace oracle {

using omt::quant::QuantType;

double f16(std::uint16_t h) {
  const int sign = (h >> 15) & 1;
  const int exp = (h >> 10) & 0x1F;
  const int man = h & 0x3FF;
  double v;
  if (exp == 0) {
    v = std::ldexp(static_cast<double>(man), -24);
  } else if (exp == 31) {
    v = man ? NAN : INFINITY;
  } else {
    v = std::ldexp(1.0 + man / 1024.0, exp - 15);
  }
  return sign ? -v : v;
}

namespace {

double f16_at(const std::uint8_t* p) { return f16(static_cast<std::uint16_t>(p[0] | (p[1] << 8))); }

// 6-bit scale and min of sub-block j in the 12-byte packed K-quant table.
void k4_scale_min(const std::uint8_t* s, int j, int& sc, int& m) {
  if (j < 4) {
    sc = s[j] & 63;
    m = s[j + 4] & 63;
  } else {
    sc = (s[j + 4] & 0x0F) | ((s[j - 4] >> 6) << 4);
    m = (s[j + 4] >> 4) | ((s[j] >> 6) << 4);
  }
}

double q2_k(const std::uint8_t* b, int i) {
  const std::uint8_t* scales = b;
  const std::uint8_t* qs = b + 16;
  const double d = f16_at(b + 80), dmin = f16_at(b + 82);
  const int h = i / 128, w = i % 128, j = w / 32, l = w % 32;
  const int q = (qs[32 * h + l] >> (2 * j)) & 3;
  const int sc = scales[8 * h + 2 * j + (l >= 16)];
  return d * (sc & 0xF) * q - dmin * (sc >> 4);
}

double q3_k(const std::uint8_t* b, int i) {
  const std::uint8_t* hmask = b;
  const std::uint8_t* qs = b + 32;
  const std::uint8_t* s = b + 96;
  const double d = f16_at(b + 108);
  const int h = i / 128, w = i % 128, j = w / 32, l = w % 32;
  const int is = 8 * h + 2 * j + (l >= 16);
  const int low = is < 8 ? (s[is] & 0xF) : (s[is - 8] >> 4);
  const int high = (s[8 + is % 4] >> (2 * (is / 4))) & 3;
  const int sc = (low | (high << 4)) - 32;
  const int q = (qs[32 * h + l] >> (2 * j)) & 3;
  const bool hbit = hmask[l] & (1 << (4 * h + j));
  return d * sc * (q - (hbit ? 0 : 4));
}

double q4_k(const std::uint8_t* b, int i) {
  const double d = f16_at(b), dmin = f16_at(b + 2);
  const std::uint8_t* qs = b + 16;
  const int c = i / 64, w = i % 64;
  const int q = w < 32 ? (qs[32 * c + w] & 0xF) : (qs[32 * c + w - 32] >> 4);
  int sc, m;
  k4_scale_min(b + 4, i / 32, sc, m);
  return d * sc * q - dmin * m;
}

double q5_k(const std::uint8_t* b, int i) {
  const double d = f16_at(b), dmin = f16_at(b + 2);
  const std::uint8_t* qh = b + 16;
  const std::uint8_t* qs = b + 48;
  const int c = i / 64, w = i % 64, l = w % 32;
  int q = w < 32 ? (qs[32 * c + l] & 0xF) : (qs[32 * c + l] >> 4);
  if ((qh[l] >> (2 * c + (w >= 32))) & 1) q += 16;
  int sc, m;
  k4_scale_min(b + 4, i / 32, sc, m);
  return d * sc * q - dmin * m;
}

double q6_k(const std::uint8_t* b, int i) {
  const std::uint8_t* ql = b;
  const std::uint8_t* qh = b + 128;
  const auto* sc = reinterpret_cast<const std::int8_t*>(b + 192);
  const double d = f16_at(b + 208);
  const int h = i / 128, w = i % 128, g = w / 32, l = w % 32;
  const std::uint8_t lbyte = ql[64 * h + l + (g & 1) * 32];
  const int lo = g < 2 ? (lbyte & 0xF) : (lbyte >> 4);
  const int hi = (qh[32 * h + l] >> (2 * g)) & 3;
  return d * sc[8 * h + l / 16 + 2 * g] * ((lo | (hi << 4)) - 32);
}

double q8_0(const std::uint8_t* b, int i) { return f16_at(b) * static_cast<std::int8_t>(b[2 + i]); }

}  // namespace

std::vector<double> dequant_block(QuantType type, const std::uint8_t* block) {
  int n = 256;
  double (*fn)(const std::uint8_t*, int) = nullptr;
  switch (type) {
    case QuantType::Q2_K: fn = q2_k; break;
    case QuantType::Q3_K: fn = q3_k; break;
    case QuantType::Q4_K: fn = q4_k; break;
    case QuantType::Q5_K: fn = q5_k; break;
    case QuantType::Q6_K: fn = q6_k; break;
    case QuantType::Q8_0:
      fn = q8_0;
      n = 32;
      break;
    case QuantType::F16: {
      return {f16_at(block)};
    }
    case QuantType::F32: {
      float f;
      std::memcpy(&f, block, 4);
      return {f};
    }
    default: throw std::runtime_error("oracle has no layout for this type");
  }
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = fn(block, i);
  return out;
}

std::vector<double> dequant_row(QuantType type, std::span<const std::byte> row, std::size_t n) {
  const auto info = *omt::quant::type_info(type);
  std::vector<double> out;
  out.reserve(n);
  const auto* p = reinterpret_cast<const std::uint8_t*>(row.data());
  for (std::size_t b = 0; b < n / info.block_elems; ++b) {
    const auto v = dequant_block(type, p + b * info.block_bytes);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

namespace {

using Weights = std::map<std::string, std::vector<double>>;

std::vector<double> matvec(const std::vector<double>& w, std::size_t rows, std::size_t cols, const std::vector<double>& x) {
  std::vector<double> y(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y[r] += w[r * cols + c] * x[c];
  }
  return y;
}

std::vector<double> rmsnorm(const std::vector<double>& x, const std::vector<double>& w, double eps) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.size()) + eps);
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * w[i];
  return y;
}

void rope(double* v, std::size_t hd, std::size_t pos, double theta) {
  for (std::size_t j = 0; j < hd / 2; ++j) {
    const double a = static_cast<double>(pos) / std::pow(theta, 2.0 * static_cast<double>(j) / static_cast<double>(hd));
    const double x = v[2 * j], y = v[2 * j + 1];
    v[2 * j] = x * std::cos(a) - y * std::sin(a);
    v[2 * j + 1] = x * std::sin(a) + y * std::cos(a);
  }
}

std::vector<double> run(const fx::TinyModel& m, const Weights& W, std::span<const std::int32_t> tokens) {
  const std::size_t d = m.embed, hd = m.embed / m.heads, kvd = hd * m.kv_heads, ff = m.ffn, V = m.vocab;
  const std::size_t T = tokens.size();
  const std::size_t group = m.heads / m.kv_heads;
  std::vector<std::vector<double>> x(T);
  const auto& emb = W.at("token_embd.weight");
  for (std::size_t t = 0; t < T; ++t) x[t].assign(emb.begin() + tokens[t] * d, emb.begin() + (tokens[t] + 1) * d);

  for (std::uint32_t l = 0; l < m.layers; ++l) {
    const std::string p = "blk." + std::to_string(l) + ".";
    std::vector<std::vector<double>> q(T), k(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      const auto xn = rmsnorm(x[t], W.at(p + "attn_norm.weight"), m.eps);
      q[t] = matvec(W.at(p + "attn_q.weight"), d, d, xn);
      k[t] = matvec(W.at(p + "attn_k.weight"), kvd, d, xn);
      v[t] = matvec(W.at(p + "attn_v.weight"), kvd, d, xn);
      for (std::size_t h = 0; h < m.heads; ++h) rope(&q[t][h * hd], hd, t, m.rope_theta);
      for (std::size_t h = 0; h < m.kv_heads; ++h) rope(&k[t][h * hd], hd, t, m.rope_theta);
    }
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> att(d, 0.0);
      for (std::size_t h = 0; h < m.heads; ++h) {
        const std::size_t kh = h / group;
        std::vector<double> s(t + 1);
        double mx = -INFINITY;
        for (std::size_t u = 0; u <= t; ++u) {
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dot += q[t][h * hd + i] * k[u][kh * hd + i];
          s[u] = dot / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, s[u]);
        }
        double sum = 0.0;
        for (auto& e : s) sum += (e = std::exp(e - mx));
        for (std::size_t u = 0; u <= t; ++u) {
          for (std::size_t i = 0; i < hd; ++i) att[h * hd + i] += s[u] / sum * v[u][kh * hd + i];
        }
      }
      const auto o = matvec(W.at(p + "attn_output.weight"), d, d, att);
      for (std::size_t i = 0; i < d; ++i) x[t][i] += o[i];
    }
    for (std::size_t t = 0; t < T; ++t) {
      const auto xn = rmsnorm(x[t], W.at(p + "ffn_norm.weight"), m.eps);
      auto g = matvec(W.at(p + "ffn_gate.weight"), ff, d, xn);
      const auto u = matvec(W.at(p + "ffn_up.weight"), ff, d, xn);
      for (std::size_t i = 0; i < ff; ++i) g[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
      const auto o = matvec(W.at(p + "ffn_down.weight"), d, ff, g);
      for (std::size_t i = 0; i < d; ++i) x[t][i] += o[i];
    }
  }
  const auto& out_w = W.count("output.weight") ? W.at("output.weight") : W.at("token_embd.weight");
  std::vector<double> logits;
  for (std::size_t t = 0; t < T; ++t) {
    const auto y = matvec(out_w, V, d, rmsnorm(x[t], W.at("output_norm.weight"), m.eps));
    logits.insert(logits.end(), y.begin(), y.end());
  }
  return logits;
}

}  // namespace

std::vector<double> forward(const fx::TinyModel& m, std::span<const std::int32_t> tokens) {
  Weights W;
  for (const auto& [name, w] : m.weights) W[name].assign(w.second.begin(), w.second.end());
  return run(m, W, tokens);
}

std::vector<double> forward_dequantized(const fx::TinyModel& m, std::span<const std::int32_t> tokens) {
  Weights W;
  for (const auto& t : m.spec().tensors) {
    std::size_t n = 1;
    for (auto d : t.dims) n *= d;
    if (t.type == QuantType::F32) {
      std::vector<float> f(n);
      std::memcpy(f.data(), t.payload.data(), n * 4);
      W[t.name].assign(f.begin(), f.end());
    } else {
      W[t.name] = dequant_row(t.type, t.payload, n);
    }
  }
  return run(m, W, tokens);
}

}  // namespace oracle
