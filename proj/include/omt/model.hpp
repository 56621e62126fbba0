#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "omt/gguf.hpp"
#include "omt/quant.hpp"
#include "omt/tokenizer.hpp"

// Llama-architecture decoder over GGUF weights.
namespace omt::llm {

using tok::TokenId;
using tok::TokenSequence;

struct ModelConfig {
  std::uint32_t n_layers = 0;
  std::uint32_t embed_dim = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t n_kv_heads = 0;
  std::uint32_t ffn_hidden_dim = 0;
  std::uint32_t vocab_size = 0;
  std::uint32_t context_len = 0;
  float rope_theta = 10000.0f;
  float rmsnorm_eps = 1e-5f;
  // Keys that were absent and fell back to defaults.
  std::vector<std::string> defaulted;

  std::uint32_t head_dim() const noexcept { return n_heads ? embed_dim / n_heads : 0; }
  std::uint32_t kv_dim() const noexcept { return head_dim() * n_kv_heads; }
};

// A 2-D weight: `rows` output rows of `cols` inputs, each row contiguous.
struct WeightMatrix {
  quant::TensorView view;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t row_bytes = 0;

  std::span<const std::byte> row(std::size_t r) const { return view.data.subspan(r * row_bytes, row_bytes); }
};

// 1-D float weight. Points into the mapped file when stored as F32,
// otherwise holds a dequantized copy.
struct VectorWeight {
  std::vector<float> owned;
  std::span<const float> values;
};

struct LayerWeights {
  VectorWeight attn_norm;
  WeightMatrix wq, wk, wv, wo;
  VectorWeight ffn_norm;
  WeightMatrix gate, up, down;
};

class Model {
 public:
  ModelConfig config;
  std::string name;
  std::string architecture;
  WeightMatrix token_embd;
  VectorWeight output_norm;
  WeightMatrix output;  // falls back to token_embd when the file has none
  std::vector<LayerWeights> layers;

  const gguf::GgufFile& file() const noexcept { return *file_; }
  std::shared_ptr<const gguf::GgufFile> file_ptr() const noexcept { return file_; }

  // Human-readable quantization label, e.g. "Q4_K_M", from general.file_type
  // when present, otherwise the most common matrix type.
  std::string quant_label() const;

 private:
  friend Model load_model(std::shared_ptr<const gguf::GgufFile> file);
  std::shared_ptr<const gguf::GgufFile> file_;
};

Model load_model(std::shared_ptr<const gguf::GgufFile> file);
ModelConfig read_config(const gguf::GgufFile& file);

// Incremental attention state. Layout [layer][kv_head][position][head_dim].
class KvCache {
 public:
  KvCache(const ModelConfig& config, std::size_t capacity = 0);  // 0: config.context_len

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t filled() const noexcept { return filled_; }
  void clear() noexcept { filled_ = 0; }
  // Marks n more positions as written. Throws ContextOverflow past capacity.
  void advance(std::size_t n);

  float* key(std::size_t layer, std::size_t kv_head, std::size_t pos) noexcept;
  float* value(std::size_t layer, std::size_t kv_head, std::size_t pos) noexcept;
  const float* key(std::size_t layer, std::size_t kv_head, std::size_t pos) const noexcept;
  const float* value(std::size_t layer, std::size_t kv_head, std::size_t pos) const noexcept;

 private:
  std::size_t index(std::size_t layer, std::size_t kv_head, std::size_t pos) const noexcept;

  std::size_t n_kv_heads_;
  std::size_t head_dim_;
  std::size_t capacity_;
  std::size_t filled_ = 0;
  std::vector<float> k_;
  std::vector<float> v_;
};

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> w, float eps);
// In place: consecutive pairs (v[2j], v[2j+1]) rotated by pos * theta^(-2j/d).
void rope_apply(std::span<float> vec, std::size_t position, float theta);

// Called with the softmax weights of each query row (positions 0..pos).
using AttentionObserver = std::function<void(std::size_t layer, std::size_t head, std::size_t pos,
                                             std::span<const float> weights)>;

struct ForwardOptions {
  bool all_logits = false;  // return logits for every input position
  const AttentionObserver* observer = nullptr;
};

// Advances the cache by tokens.size() and returns the last position's logits
// (or all positions' logits, row-major, with all_logits).
std::vector<float> forward(const Model& model, std::span<const TokenId> tokens, KvCache& cache,
                           const ForwardOptions& options = {});

struct GenParams {
  int max_new_tokens = 256;
  float temperature = 0.0f;
  std::vector<TokenId> stop_token_ids;
  std::uint64_t seed = 0;
};

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}
  TokenId sample(std::span<const float> logits, float temperature);

 private:
  std::mt19937_64 rng_;
};

// Lowest id among the maxima.
TokenId argmax(std::span<const float> logits);

TokenId sample(std::span<const float> logits, const GenParams& params, Sampler& sampler);

struct GenResult {
  TokenSequence tokens;  // excludes the stop token
  bool stopped = false;    // a stop token was produced
  bool truncated = false;  // ran out of context
  bool cancelled = false;  // the sink asked to stop
  double prompt_ms = 0.0;
  double generate_ms = 0.0;
};

// Sink is called once per emitted token, in order; returning false cancels
// generation after that token.
using TokenSink = std::function<bool(TokenId)>;

GenResult generate(const Model& model, std::span<const TokenId> prompt, const GenParams& params, KvCache& cache,
                   const TokenSink& sink = {});

}  // namespace omt::llm
