#include <algorithm>
#include <cstring>
#include <map>

#include "omt/error.hpp"
#include "omt/model.hpp"

namespace omt::llm {
namespace {

using gguf::GgufFile;
using gguf::MetaType;
using quant::QuantType;

std::uint32_t require_u32(const GgufFile& f, const std::string& key) {
  const auto* v = f.find(key);
  if (!v) fail(Errc::NotFound, "metadata key " + key + " is missing");
  const auto x = v->as_uint();
  if (x > 0xFFFFFFFFu) fail(Errc::InvalidArgument, key + " is out of range");
  return static_cast<std::uint32_t>(x);
}

std::string blk(std::size_t layer, const char* what) {
  return "blk." + std::to_string(layer) + "." + what + ".weight";
}

quant::TensorView require_tensor(const GgufFile& f, const std::string& name) {
  if (!f.find_tensor(name)) fail(Errc::MissingTensor, "tensor " + name + " is missing");
  return gguf::tensor_view(f, name);
}

WeightMatrix load_matrix(const GgufFile& f, const std::string& name, std::size_t rows, std::size_t cols) {
  auto view = require_tensor(f, name);
  if (view.dims.size() != 2 || view.dims[0] != cols || view.dims[1] != rows) {
    std::string got;
    for (auto d : view.dims) got += (got.empty() ? "" : "x") + std::to_string(d);
    fail(Errc::ShapeMismatch, name + ": expected " + std::to_string(cols) + "x" + std::to_string(rows) + ", got " + got);
  }
  if (!quant::has_kernels(view.type)) {
    fail(Errc::UnsupportedQuantType, name + ": no kernels for " + std::string(quant::type_name(view.type)));
  }
  WeightMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_bytes = static_cast<std::size_t>(quant::byte_size(view.type, cols));
  m.view = std::move(view);
  return m;
}

VectorWeight load_vector(const GgufFile& f, const std::string& name, std::size_t n) {
  auto view = require_tensor(f, name);
  if (view.dims.size() != 1 || view.dims[0] != n) {
    fail(Errc::ShapeMismatch, name + ": expected a vector of " + std::to_string(n));
  }
  if (!quant::has_kernels(view.type)) {
    fail(Errc::UnsupportedQuantType, name + ": no kernels for " + std::string(quant::type_name(view.type)));
  }
  VectorWeight w;
  const bool aligned = reinterpret_cast<std::uintptr_t>(view.data.data()) % alignof(float) == 0;
  if (view.type == QuantType::F32 && aligned) {
    w.values = {reinterpret_cast<const float*>(view.data.data()), n};
  } else {
    w.owned = quant::dequantize_tensor(view);
    w.values = w.owned;
  }
  return w;
}

}  // namespace

ModelConfig read_config(const GgufFile& f) {
  const auto* arch_v = f.find("general.architecture");
  if (!arch_v) fail(Errc::UnsupportedArchitecture, "general.architecture is missing");
  const std::string arch = arch_v->as_string();
  if (arch != "llama") fail(Errc::UnsupportedArchitecture, "architecture '" + arch + "' is not supported");

  ModelConfig c;
  const std::string p = arch + ".";
  c.n_layers = require_u32(f, p + "block_count");
  c.embed_dim = require_u32(f, p + "embedding_length");
  c.n_heads = require_u32(f, p + "attention.head_count");
  c.ffn_hidden_dim = require_u32(f, p + "feed_forward_length");
  c.context_len = require_u32(f, p + "context_length");
  if (f.find(p + "attention.head_count_kv")) {
    c.n_kv_heads = require_u32(f, p + "attention.head_count_kv");
  } else {
    c.n_kv_heads = c.n_heads;
    c.defaulted.push_back(p + "attention.head_count_kv");
  }
  if (const auto* v = f.find(p + "rope.freq_base")) {
    c.rope_theta = static_cast<float>(v->as_number());
  } else {
    c.defaulted.push_back(p + "rope.freq_base");
  }
  if (const auto* v = f.find(p + "attention.layer_norm_rms_epsilon")) {
    c.rmsnorm_eps = static_cast<float>(v->as_number());
  } else {
    c.defaulted.push_back(p + "attention.layer_norm_rms_epsilon");
  }
  if (f.find(p + "vocab_size")) {
    c.vocab_size = require_u32(f, p + "vocab_size");
  } else if (const auto* t = f.find_tensor("token_embd.weight"); t && t->dims.size() == 2) {
    c.vocab_size = static_cast<std::uint32_t>(t->dims[1]);
  } else if (const auto* toks = f.find("tokenizer.ggml.tokens")) {
    c.vocab_size = static_cast<std::uint32_t>(toks->as_array().items.size());
  }

  if (c.n_layers == 0 || c.embed_dim == 0 || c.n_heads == 0 || c.n_kv_heads == 0 || c.ffn_hidden_dim == 0 ||
      c.vocab_size == 0 || c.context_len == 0) {
    fail(Errc::ShapeMismatch, "model hyperparameters must be positive");
  }
  if (c.embed_dim % c.n_heads != 0) fail(Errc::ShapeMismatch, "embedding_length is not a multiple of head_count");
  if (c.n_heads % c.n_kv_heads != 0) fail(Errc::ShapeMismatch, "head_count is not a multiple of head_count_kv");
  if (c.head_dim() % 2 != 0) fail(Errc::OddHeadDim, "head dimension " + std::to_string(c.head_dim()) + " is odd");
  return c;
}

Model load_model(std::shared_ptr<const GgufFile> file) {
  if (!file) fail(Errc::InvalidArgument, "no model file");
  const GgufFile& f = *file;
  Model m;
  m.file_ = file;
  m.config = read_config(f);
  const auto& c = m.config;
  m.architecture = "llama";
  if (const auto* v = f.find("general.name"); v && v->type() == MetaType::String) m.name = v->as_string();

  const std::size_t d = c.embed_dim, kv = c.kv_dim(), ff = c.ffn_hidden_dim, V = c.vocab_size;
  m.token_embd = load_matrix(f, "token_embd.weight", V, d);
  m.output_norm = load_vector(f, "output_norm.weight", d);
  m.output = f.find_tensor("output.weight") ? load_matrix(f, "output.weight", V, d) : m.token_embd;
  m.layers.reserve(c.n_layers);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LayerWeights w;
    w.attn_norm = load_vector(f, blk(l, "attn_norm"), d);
    w.wq = load_matrix(f, blk(l, "attn_q"), d, d);
    w.wk = load_matrix(f, blk(l, "attn_k"), kv, d);
    w.wv = load_matrix(f, blk(l, "attn_v"), kv, d);
    w.wo = load_matrix(f, blk(l, "attn_output"), d, d);
    w.ffn_norm = load_vector(f, blk(l, "ffn_norm"), d);
    w.gate = load_matrix(f, blk(l, "ffn_gate"), ff, d);
    w.up = load_matrix(f, blk(l, "ffn_up"), ff, d);
    w.down = load_matrix(f, blk(l, "ffn_down"), d, ff);
    m.layers.push_back(std::move(w));
  }
  return m;
}

std::string Model::quant_label() const {
  if (const auto* v = file_->find("general.file_type")) {
    static const std::map<std::int64_t, const char*> names = {
        {0, "F32"},     {1, "F16"},     {7, "Q8_0"},    {10, "Q2_K"},   {11, "Q3_K_S"}, {12, "Q3_K_M"},
        {13, "Q3_K_L"}, {14, "Q4_K_S"}, {15, "Q4_K_M"}, {16, "Q5_K_S"}, {17, "Q5_K_M"}, {18, "Q6_K"},
    };
    try {
      if (auto it = names.find(v->as_int()); it != names.end()) return it->second;
    } catch (const Error&) {
    }
  }
  std::map<QuantType, std::uint64_t> bytes;
  for (const auto& t : file_->tensors) {
    if (t.dims.size() == 2 && !t.opaque()) bytes[t.type] += t.byte_size();
  }
  if (bytes.empty()) return "unknown";
  auto best = std::max_element(bytes.begin(), bytes.end(),
                               [](const auto& a, const auto& b) { return a.second < b.second; });
  return std::string(quant::type_name(best->first));
}

KvCache::KvCache(const ModelConfig& config, std::size_t capacity)
    : n_kv_heads_(config.n_kv_heads),
      head_dim_(config.head_dim()),
      capacity_(capacity ? capacity : config.context_len) {
  const std::size_t n = static_cast<std::size_t>(config.n_layers) * n_kv_heads_ * capacity_ * head_dim_;
  k_.assign(n, 0.0f);
  v_.assign(n, 0.0f);
}

void KvCache::advance(std::size_t n) {
  if (n > capacity_ - filled_) {
    fail(Errc::ContextOverflow, "context of " + std::to_string(capacity_) + " tokens exceeded (" +
                                    std::to_string(filled_ + n) + " needed)");
  }
  filled_ += n;
}

std::size_t KvCache::index(std::size_t layer, std::size_t kv_head, std::size_t pos) const noexcept {
  return ((layer * n_kv_heads_ + kv_head) * capacity_ + pos) * head_dim_;
}

float* KvCache::key(std::size_t layer, std::size_t kv_head, std::size_t pos) noexcept {
  return k_.data() + index(layer, kv_head, pos);
}
float* KvCache::value(std::size_t layer, std::size_t kv_head, std::size_t pos) noexcept {
  return v_.data() + index(layer, kv_head, pos);
}
const float* KvCache::key(std::size_t layer, std::size_t kv_head, std::size_t pos) const noexcept {
  return k_.data() + index(layer, kv_head, pos);
}
const float* KvCache::value(std::size_t layer, std::size_t kv_head, std::size_t pos) const noexcept {
  return v_.data() + index(layer, kv_head, pos);
}

}  // namespace omt::llm
