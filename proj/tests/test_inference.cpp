#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "omt/error.hpp"
#include "omt/model.hpp"
#include "omt/parallel.hpp"
#include "oracles.hpp"

using namespace omt;
using namespace omt::llm;
using quant::QuantType;

namespace {

fx::TinyModel tiny(QuantType t = QuantType::F32) {
  fx::TinyModel m;
  m.matrix_type = t;
  if (t != QuantType::F32) {
    // Quantized rows need whole blocks.
    m.embed = 256;
    m.heads = 4;
    m.kv_heads = 2;
    m.ffn = 512;
    m.weight_scale = 0.06f;
  }
  m.init_weights();
  return m;
}

std::vector<TokenSequence> prompts(std::uint32_t vocab, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < count; ++i) {
    TokenSequence p(1 + rng() % 12);
    for (auto& t : p) t = static_cast<TokenId>(rng() % vocab);
    out.push_back(p);
  }
  return out;
}

double max_diff(std::span<const float> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::IoError;
}

gguf::WriteSpec without(gguf::WriteSpec s, const std::string& name) {
  std::erase_if(s.tensors, [&](const gguf::TensorSpec& t) { return t.name == name; });
  std::erase_if(s.metadata, [&](const auto& kv) { return kv.first == name; });
  return s;
}

std::shared_ptr<const gguf::GgufFile> parse_spec(const gguf::WriteSpec& s) {
  return std::make_shared<const gguf::GgufFile>(gguf::parse(std::make_shared<OwnedBytes>(gguf::write(s))));
}

}  // namespace

TEST_CASE("rms_norm") {
  const std::vector<float> x(8, 2.0f), w(8, 1.0f);
  for (float v : rms_norm(x, w, 0.0f)) CHECK(v == 1.0f);
  const std::vector<float> z(8, 0.0f);
  for (float v : rms_norm(z, w, 1e-5f)) CHECK(v == 0.0f);

  std::mt19937_64 rng(4);
  std::normal_distribution<float> nd;
  std::vector<float> a(64), b(64);
  for (auto& v : a) v = nd(rng);
  for (auto& v : b) v = nd(rng);
  const auto got = rms_norm(a, b, 1e-5f);
  double ss = 0;
  for (float v : a) ss += static_cast<double>(v) * v;
  const double inv = 1.0 / std::sqrt(ss / 64 + 1e-5);
  for (int i = 0; i < 64; ++i) CHECK(std::fabs(got[i] - a[i] * inv * b[i]) <= 1e-6);
  CHECK(code_of([&] { rms_norm(a, std::span(b).first(10), 1e-5f); }) == Errc::LengthMismatch);
}

TEST_CASE("rope") {
  std::vector<float> v = {0.3f, -1.2f, 0.5f, 2.0f};
  const auto orig = v;
  rope_apply(v, 0, 10000.0f);
  CHECK(v == orig);
  rope_apply(v, 1, 10000.0f);
  CHECK(v[0] == doctest::Approx(0.3 * std::cos(1.0) + 1.2 * std::sin(1.0)).epsilon(1e-6));
  CHECK(v[1] == doctest::Approx(0.3 * std::sin(1.0) - 1.2 * std::cos(1.0)).epsilon(1e-6));
  // Pair j=1 of a 4-dim head: angle 10000^(-1/2) = 0.01.
  CHECK(v[2] == doctest::Approx(0.5 * std::cos(0.01) - 2.0 * std::sin(0.01)).epsilon(1e-6));
  std::vector<float> odd(3, 1.0f);
  CHECK(code_of([&] { rope_apply(odd, 1, 10000.0f); }) == Errc::OddHeadDim);
}

TEST_CASE("config comes from metadata") {
  const auto m = tiny();
  const auto l = fx::load(m);
  const auto& c = l.model->config;
  CHECK(c.n_layers == 2);
  CHECK(c.embed_dim == 8);
  CHECK(c.n_heads == 2);
  CHECK(c.n_kv_heads == 1);
  CHECK(c.ffn_hidden_dim == 16);
  CHECK(c.vocab_size == 16);
  CHECK(c.context_len == 32);
  CHECK(c.head_dim() == 4);
  CHECK(c.defaulted.empty());
  CHECK(l.model->layers.size() == 2);
  CHECK(l.model->quant_label() == "F32");
}

TEST_CASE("load errors") {
  const auto m = tiny();
  auto spec = m.spec();
  for (auto& [k, v] : spec.metadata) {
    if (k == "general.architecture") v = "gptj";
  }
  CHECK(code_of([&] { load_model(parse_spec(spec)); }) == Errc::UnsupportedArchitecture);

  try {
    load_model(parse_spec(without(m.spec(), "blk.1.ffn_up.weight")));
    FAIL("no error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::MissingTensor);
    CHECK(std::string(e.what()).find("blk.1.ffn_up.weight") != std::string::npos);
  }
  CHECK(code_of([&] { load_model(parse_spec(without(m.spec(), "llama.embedding_length"))); }) == Errc::NotFound);

  const auto d = read_config(*parse_spec(without(m.spec(), "llama.rope.freq_base")));
  CHECK(d.rope_theta == 10000.0f);
  CHECK(d.defaulted == std::vector<std::string>{"llama.rope.freq_base"});
}

TEST_CASE("tied output falls back to the embedding") {
  auto m = tiny();
  m.tied_output = true;
  m.init_weights();
  const auto l = fx::load(m);
  const TokenSequence p = {1, 5, 9};
  KvCache cache(l.model->config);
  const auto got = forward(*l.model, p, cache);
  const auto want = oracle::forward(m, p);
  CHECK(max_diff(got, std::span(want).last(16)) <= 1e-4);
}

TEST_CASE("forward matches the brute-force oracle") {
  const auto m = tiny();
  const auto l = fx::load(m);
  for (const auto& p : prompts(m.vocab, 10, 21)) {
    KvCache cache(l.model->config);
    ForwardOptions o;
    o.all_logits = true;
    const auto got = forward(*l.model, p, cache, o);
    const auto want = oracle::forward(m, p);
    CHECK(max_diff(got, want) <= 1e-4);
    CHECK(cache.filled() == p.size());
  }
}

TEST_CASE("quantized forward matches the oracle on dequantized weights") {
  for (QuantType t : {QuantType::Q8_0, QuantType::Q4_K, QuantType::Q6_K}) {
    const auto m = tiny(t);
    const auto l = fx::load(m);
    // Short prompts take the fused dot_q path, long ones the dequantized
    // batch path.
    for (std::size_t len : {1u, 3u, 9u}) {
      TokenSequence p(len);
      for (std::size_t i = 0; i < len; ++i) p[i] = static_cast<TokenId>((i * 7 + 3) % m.vocab);
      KvCache cache(l.model->config);
      ForwardOptions o;
      o.all_logits = true;
      const auto got = forward(*l.model, p, cache, o);
      const auto want = oracle::forward_dequantized(m, p);
      INFO(quant::type_name(t), " len ", len);
      CHECK(max_diff(got, want) <= 1e-3);
    }
  }
}

TEST_CASE("cached and uncached logits agree") {
  const auto m = tiny();
  const auto l = fx::load(m);
  for (const auto& p : prompts(m.vocab, 10, 33)) {
    KvCache inc(l.model->config);
    std::vector<float> last;
    for (auto t : p) last = forward(*l.model, std::span(&t, 1), inc);
    KvCache full(l.model->config);
    const auto all = forward(*l.model, p, full);
    CHECK(max_diff(last, std::vector<double>(all.begin(), all.end())) <= 1e-4);
  }
}

TEST_CASE("forward input checks") {
  const auto m = tiny();
  const auto l = fx::load(m);
  KvCache cache(l.model->config);
  CHECK(code_of([&] { forward(*l.model, {}, cache); }) == Errc::EmptyInput);
  const TokenSequence bad = {1, 16};
  CHECK(code_of([&] { forward(*l.model, bad, cache); }) == Errc::InvalidTokenId);
  CHECK(cache.filled() == 0);
  KvCache small(l.model->config, 4);
  const TokenSequence five = {1, 2, 3, 4, 5};
  CHECK(code_of([&] { forward(*l.model, five, small); }) == Errc::ContextOverflow);
  CHECK(small.filled() == 0);
}

TEST_CASE("attention weights are causal and normalized") {
  const auto m = tiny();
  const auto l = fx::load(m);
  KvCache cache(l.model->config);
  std::size_t calls = 0;
  AttentionObserver obs = [&](std::size_t, std::size_t, std::size_t pos, std::span<const float> w) {
    ++calls;
    CHECK(w.size() == pos + 1);
    double s = 0;
    for (float x : w) s += x;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  };
  ForwardOptions o;
  o.observer = &obs;
  const TokenSequence p = {1, 2, 3, 4};
  forward(*l.model, p, cache, o);
  CHECK(calls == 2 * 2 * 4);
}

TEST_CASE("sampling") {
  const std::vector<float> tie = {0.0f, 3.0f, 3.0f};
  CHECK(argmax(tie) == 1);
  Sampler s(1);
  CHECK(s.sample(tie, 0.0f) == 1);
  std::vector<float> shifted = tie;
  for (auto& x : shifted) x += 100.0f;
  CHECK(argmax(shifted) == 1);

  std::vector<float> dominant(16, 0.0f);
  dominant[7] = 10.0f;
  for (float temp : {0.5f, 1.0f}) {
    Sampler r(42);
    int hits = 0;
    for (int i = 0; i < 10000; ++i) hits += r.sample(dominant, temp) == 7;
    CHECK(hits > 9900);
  }
  // Same seed, same draws.
  Sampler a(9), b(9);
  const std::vector<float> flat(16, 0.0f);
  for (int i = 0; i < 100; ++i) CHECK(a.sample(flat, 1.0f) == b.sample(flat, 1.0f));
}

TEST_CASE("generate") {
  const auto m = tiny();
  const auto l = fx::load(m);
  const TokenSequence prompt = {1, 4, 5, 6};
  KvCache cache(l.model->config);
  GenParams g;
  g.max_new_tokens = 3;
  std::vector<TokenId> seen;
  const auto r = generate(*l.model, prompt, g, cache, [&](TokenId id) {
    seen.push_back(id);
    return true;
  });
  CHECK(r.tokens.size() == 3);
  CHECK(seen == r.tokens);
  CHECK_FALSE(r.stopped);

  // The first greedy token as a stop token: nothing is emitted.
  GenParams stop = g;
  stop.stop_token_ids = {r.tokens[0]};
  seen.clear();
  const auto s = generate(*l.model, prompt, stop, cache, [&](TokenId id) {
    seen.push_back(id);
    return true;
  });
  CHECK(s.tokens.empty());
  CHECK(s.stopped);
  CHECK(seen.empty());

  // Cancel after the first token.
  GenParams longer = g;
  longer.max_new_tokens = 10;
  const auto c = generate(*l.model, prompt, longer, cache, [](TokenId) { return false; });
  CHECK(c.tokens.size() == 1);
  CHECK(c.cancelled);

  // Context runs out.
  KvCache small(l.model->config, 6);
  const auto t = generate(*l.model, prompt, longer, small);
  CHECK(t.truncated);
  CHECK(prompt.size() + t.tokens.size() <= 7);

  CHECK(code_of([&] { generate(*l.model, {}, g, cache); }) == Errc::EmptyInput);
  KvCache tiny_cache(l.model->config, 4);
  CHECK(code_of([&] { generate(*l.model, prompt, g, tiny_cache); }) == Errc::ContextOverflow);
}

TEST_CASE("greedy decoding is reproducible across runs and thread counts") {
  const auto m = tiny(QuantType::Q4_K);
  const auto l = fx::load(m);
  const TokenSequence prompt = {1, 3, 8, 2, 11, 5};
  GenParams g;
  g.max_new_tokens = 12;
  TokenSequence first;
  for (std::size_t threads : {1u, 1u, 2u, 3u, 4u, 8u}) {
    parallel::set_thread_count(threads);
    KvCache cache(l.model->config);
    const auto r = generate(*l.model, prompt, g, cache);
    if (first.empty()) first = r.tokens;
    CHECK(r.tokens == first);
  }
  parallel::set_thread_count(0);
  CHECK(first.size() == 12);
}
