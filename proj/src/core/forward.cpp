#include <algorithm>
#include <cmath>

#include "omt/error.hpp"
#include "omt/model.hpp"
#include "omt/parallel.hpp"

namespace omt::llm {
namespace {

// Below this many tokens each row is dotted straight from its quantized
// bytes; above it a row is expanded once and reused for every token.
constexpr std::size_t kBatchThreshold = 4;

// y[t * rows + r] = w.row(r) . x[t * cols ...]
void matmul(const WeightMatrix& w, const float* x, std::size_t n_tokens, float* y) {
  const std::size_t rows = w.rows, cols = w.cols;
  const auto type = w.view.type;
  if (n_tokens < kBatchThreshold) {
    for (std::size_t t = 0; t < n_tokens; ++t) {
      const quant::Activation act({x + t * cols, cols});
      float* out = y + t * rows;
      parallel::parallel_for(rows, [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) out[r] = quant::dot_q(type, w.row(r), act);
      });
    }
    return;
  }
  parallel::parallel_for(rows, [&](std::size_t begin, std::size_t end) {
    std::vector<float> buf(cols);
    for (std::size_t r = begin; r < end; ++r) {
      quant::dequantize_row(type, w.row(r), buf);
      for (std::size_t t = 0; t < n_tokens; ++t) y[t * rows + r] = quant::dot(buf, {x + t * cols, cols});
    }
  });
}

void rms_norm_into(const float* x, std::span<const float> w, float eps, float* out) {
  const std::size_t n = w.size();
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) ss += static_cast<double>(x[i]) * x[i];
  const float scale = static_cast<float>(1.0 / std::sqrt(ss / static_cast<double>(n) + eps));
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] * scale * w[i];
}

float silu(float v) { return v / (1.0f + std::exp(-v)); }

}  // namespace

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> w, float eps) {
  if (x.size() != w.size()) fail(Errc::LengthMismatch, "rms_norm: input and weight lengths differ");
  std::vector<float> out(x.size());
  if (!x.empty()) rms_norm_into(x.data(), w, eps, out.data());
  return out;
}

void rope_apply(std::span<float> vec, std::size_t position, float theta) {
  const std::size_t d = vec.size();
  if (d % 2 != 0) fail(Errc::OddHeadDim, "rope needs an even length, got " + std::to_string(d));
  for (std::size_t j = 0; j < d / 2; ++j) {
    const double freq = std::pow(static_cast<double>(theta), -2.0 * static_cast<double>(j) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * freq;
    const float c = static_cast<float>(std::cos(angle));
    const float s = static_cast<float>(std::sin(angle));
    const float a = vec[2 * j], b = vec[2 * j + 1];
    vec[2 * j] = a * c - b * s;
    vec[2 * j + 1] = a * s + b * c;
  }
}

std::vector<float> forward(const Model& model, std::span<const TokenId> tokens, KvCache& cache,
                           const ForwardOptions& options) {
  const auto& c = model.config;
  const std::size_t T = tokens.size();
  if (T == 0) fail(Errc::EmptyInput, "forward needs at least one token");
  const std::size_t p0 = cache.filled();
  if (T > cache.capacity() - p0) {
    fail(Errc::ContextOverflow, "context of " + std::to_string(cache.capacity()) + " tokens exceeded (" +
                                    std::to_string(p0 + T) + " needed)");
  }
  for (TokenId id : tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= c.vocab_size) {
      fail(Errc::InvalidTokenId, "token id " + std::to_string(id) + " is outside the vocabulary");
    }
  }

  const std::size_t d = c.embed_dim, hd = c.head_dim(), kvd = c.kv_dim(), ff = c.ffn_hidden_dim;
  const std::size_t n_heads = c.n_heads, group = c.n_heads / c.n_kv_heads;
  std::vector<float> x(T * d), xn(T * d), q(T * d), k(T * kvd), v(T * kvd), att(T * d), o(T * d);
  std::vector<float> g(T * ff), u(T * ff);
  std::vector<float> scores(p0 + T);

  for (std::size_t t = 0; t < T; ++t) {
    quant::dequantize_row(model.token_embd.view.type, model.token_embd.row(static_cast<std::size_t>(tokens[t])),
                          {x.data() + t * d, d});
  }

  const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& w = model.layers[l];
    for (std::size_t t = 0; t < T; ++t) rms_norm_into(&x[t * d], w.attn_norm.values, c.rmsnorm_eps, &xn[t * d]);
    matmul(w.wq, xn.data(), T, q.data());
    matmul(w.wk, xn.data(), T, k.data());
    matmul(w.wv, xn.data(), T, v.data());

    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t pos = p0 + t;
      for (std::size_t h = 0; h < n_heads; ++h) rope_apply({&q[t * d + h * hd], hd}, pos, c.rope_theta);
      for (std::size_t h = 0; h < c.n_kv_heads; ++h) {
        rope_apply({&k[t * kvd + h * hd], hd}, pos, c.rope_theta);
        std::copy_n(&k[t * kvd + h * hd], hd, cache.key(l, h, pos));
        std::copy_n(&v[t * kvd + h * hd], hd, cache.value(l, h, pos));
      }
    }

    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t pos = p0 + t;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t kh = h / group;
        const float* qh = &q[t * d + h * hd];
        float mx = -INFINITY;
        for (std::size_t p = 0; p <= pos; ++p) {
          scores[p] = quant::dot({qh, hd}, {cache.key(l, kh, p), hd}) * scale;
          mx = std::max(mx, scores[p]);
        }
        float sum = 0.0f;
        for (std::size_t p = 0; p <= pos; ++p) {
          scores[p] = std::exp(scores[p] - mx);
          sum += scores[p];
        }
        for (std::size_t p = 0; p <= pos; ++p) scores[p] /= sum;
        if (options.observer && *options.observer) (*options.observer)(l, h, pos, {scores.data(), pos + 1});
        float* out = &att[t * d + h * hd];
        std::fill_n(out, hd, 0.0f);
        for (std::size_t p = 0; p <= pos; ++p) {
          const float* vp = cache.value(l, kh, p);
          for (std::size_t i = 0; i < hd; ++i) out[i] += scores[p] * vp[i];
        }
      }
    }

    matmul(w.wo, att.data(), T, o.data());
    for (std::size_t i = 0; i < T * d; ++i) x[i] += o[i];

    for (std::size_t t = 0; t < T; ++t) rms_norm_into(&x[t * d], w.ffn_norm.values, c.rmsnorm_eps, &xn[t * d]);
    matmul(w.gate, xn.data(), T, g.data());
    matmul(w.up, xn.data(), T, u.data());
    for (std::size_t i = 0; i < T * ff; ++i) g[i] = silu(g[i]) * u[i];
    matmul(w.down, g.data(), T, o.data());
    for (std::size_t i = 0; i < T * d; ++i) x[i] += o[i];
  }

  const std::size_t first = options.all_logits ? 0 : T - 1;
  const std::size_t n_out = T - first;
  for (std::size_t t = first; t < T; ++t) {
    rms_norm_into(&x[t * d], model.output_norm.values, c.rmsnorm_eps, &xn[(t - first) * d]);
  }
  std::vector<float> logits(n_out * c.vocab_size);
  matmul(model.output, xn.data(), n_out, logits.data());
  for (float z : logits) {
    if (!std::isfinite(z)) fail(Errc::NonFiniteActivation, "logits contain a non-finite value");
  }
  cache.advance(T);
  return logits;
}

}  // namespace omt::llm
