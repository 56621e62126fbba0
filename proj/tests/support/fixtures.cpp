#include "fixtures.hpp"

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "omt/quant.hpp"

namespace fx {

using omt::gguf::MetaType;
using omt::gguf::MetaValue;
using omt::quant::QuantType;

std::filesystem::path data_path(const std::string& name) { return std::filesystem::path(OMT_TEST_DATA) / name; }

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("omt_" + std::to_string(::getpid()) + "_" + name);
}

void add_small_vocab(omt::gguf::Metadata& md, std::uint32_t n) {
  static const char* base[] = {"<unk>", "<s>", "</s>", "\xE2\x96\x81", "a", "b", "c", "d",
                               "e", "\xE2\x96\x81" "a", "\xE2\x96\x81" "b", "ab", "cd", "\xE2\x96\x81" "ab", "x", "y"};
  std::vector<std::string> pieces;
  std::vector<MetaValue> scores, types;
  for (std::uint32_t i = 0; i < n; ++i) {
    pieces.push_back(i < 16 ? base[i] : "tok" + std::to_string(i));
    scores.emplace_back(-static_cast<float>(i));
    types.emplace_back(static_cast<std::int32_t>(i == 0 ? 2 : (i < 3 ? 3 : 1)));
  }
  md.emplace_back("tokenizer.ggml.model", "llama");
  md.emplace_back("tokenizer.ggml.tokens", omt::gguf::string_array(pieces));
  md.emplace_back("tokenizer.ggml.scores", omt::gguf::make_array(MetaType::F32, scores));
  md.emplace_back("tokenizer.ggml.token_type", omt::gguf::make_array(MetaType::I32, types));
  md.emplace_back("tokenizer.ggml.bos_token_id", std::uint32_t{1});
  md.emplace_back("tokenizer.ggml.eos_token_id", std::uint32_t{2});
  md.emplace_back("tokenizer.ggml.unknown_token_id", std::uint32_t{0});
}

void TinyModel::init_weights() {
  if (llama_vocab) vocab = 32000;
  weights.clear();
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  auto matrix = [&](const std::string& name, std::uint64_t rows, std::uint64_t cols, float scale) {
    std::vector<float> v(rows * cols);
    for (auto& x : v) x = nd(rng) * scale;
    weights[name] = {{cols, rows}, std::move(v)};
  };
  auto norm = [&](const std::string& name) {
    std::vector<float> v(embed);
    for (auto& x : v) x = 1.0f + 0.1f * nd(rng);
    weights[name] = {{embed}, std::move(v)};
  };
  const std::uint64_t kv = embed / heads * kv_heads;
  matrix("token_embd.weight", vocab, embed, 1.0f);
  norm("output_norm.weight");
  if (!tied_output) matrix("output.weight", vocab, embed, weight_scale);
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::string p = "blk." + std::to_string(l) + ".";
    norm(p + "attn_norm.weight");
    matrix(p + "attn_q.weight", embed, embed, weight_scale);
    matrix(p + "attn_k.weight", kv, embed, weight_scale);
    matrix(p + "attn_v.weight", kv, embed, weight_scale);
    matrix(p + "attn_output.weight", embed, embed, weight_scale);
    norm(p + "ffn_norm.weight");
    matrix(p + "ffn_gate.weight", ffn, embed, weight_scale);
    matrix(p + "ffn_up.weight", ffn, embed, weight_scale);
    matrix(p + "ffn_down.weight", embed, ffn, weight_scale);
  }
}

omt::gguf::WriteSpec TinyModel::spec() const {
  omt::gguf::WriteSpec s;
  auto& md = s.metadata;
  md.emplace_back("general.architecture", "llama");
  md.emplace_back("general.name", "tiny-test");
  md.emplace_back("llama.block_count", layers);
  md.emplace_back("llama.embedding_length", embed);
  md.emplace_back("llama.attention.head_count", heads);
  md.emplace_back("llama.attention.head_count_kv", kv_heads);
  md.emplace_back("llama.feed_forward_length", ffn);
  md.emplace_back("llama.context_length", context);
  md.emplace_back("llama.rope.freq_base", rope_theta);
  md.emplace_back("llama.attention.layer_norm_rms_epsilon", eps);
  if (llama_vocab) {
    const auto vf = omt::gguf::open(data_path("ggml-vocab-llama-spm.gguf"));
    for (const auto& [k, v] : vf.metadata) {
      if (k.rfind("tokenizer.", 0) == 0) md.emplace_back(k, v);
    }
  } else {
    add_small_vocab(md, vocab);
  }
  if (!chat_template.empty()) md.emplace_back("tokenizer.chat_template", chat_template);

  for (const auto& [name, w] : weights) {
    const auto& [dims, values] = w;
    const bool is_matrix = dims.size() == 2;
    const QuantType t = is_matrix ? matrix_type : QuantType::F32;
    std::vector<std::byte> payload;
    if (t == QuantType::F32) {
      payload.resize(values.size() * 4);
      std::memcpy(payload.data(), values.data(), payload.size());
    } else {
      payload = omt::quant::quantize(t, values);
    }
    s.tensors.push_back({name, dims, t, std::move(payload), {}});
  }
  return s;
}

std::vector<std::byte> TinyModel::bytes() const { return omt::gguf::write(spec()); }

std::shared_ptr<const omt::gguf::GgufFile> TinyModel::file() const {
  auto region = std::make_shared<omt::OwnedBytes>(bytes());
  return std::make_shared<const omt::gguf::GgufFile>(omt::gguf::parse(region));
}

Loaded load(const TinyModel& m) {
  Loaded l;
  l.file = m.file();
  l.vocab = std::make_shared<const omt::tok::Vocab>(omt::tok::load_vocab(*l.file));
  l.model = std::make_shared<const omt::llm::Model>(omt::llm::load_model(l.file));
  return l;
}

namespace {

MetaValue random_scalar(std::mt19937_64& rng, MetaType t) {
  std::uniform_int_distribution<std::int64_t> any(-1'000'000'000LL, 1'000'000'000LL);
  const auto r = any(rng);
  switch (t) {
    case MetaType::U8: return static_cast<std::uint8_t>(r);
    case MetaType::I8: return static_cast<std::int8_t>(r);
    case MetaType::U16: return static_cast<std::uint16_t>(r);
    case MetaType::I16: return static_cast<std::int16_t>(r);
    case MetaType::U32: return static_cast<std::uint32_t>(r);
    case MetaType::I32: return static_cast<std::int32_t>(r);
    case MetaType::F32: return static_cast<float>(r) / 1024.0f;
    case MetaType::Bool: return (r & 1) != 0;
    case MetaType::U64: return static_cast<std::uint64_t>(r) * 4099u;
    case MetaType::I64: return r * 4099;
    case MetaType::F64: return static_cast<double>(r) / 3.0;
    default: break;
  }
  static const char* words[] = {"", "llama", "Xin chào", "tiếng Việt", "a\tb", "😀", "key=value", "\xE2\x96\x81hello"};
  return std::string(words[static_cast<std::uint64_t>(r) % 8]);
}

MetaValue random_value(std::mt19937_64& rng, int depth) {
  static const MetaType scalars[] = {MetaType::U8,  MetaType::I8,  MetaType::U16,  MetaType::I16,
                                     MetaType::U32, MetaType::I32, MetaType::F32,  MetaType::Bool,
                                     MetaType::U64, MetaType::I64, MetaType::F64,  MetaType::String};
  std::uniform_int_distribution<int> pick(0, 13);
  const int k = pick(rng);
  if (k < 12) return random_scalar(rng, scalars[k]);
  std::uniform_int_distribution<int> len(0, 6);
  const int n = len(rng);
  if (depth < 2 && k == 13) {
    // Nested arrays must share the element tag; inner lengths vary.
    std::vector<MetaValue> items;
    const MetaType inner = scalars[pick(rng) % 12];
    for (int i = 0; i < n; ++i) {
      std::vector<MetaValue> sub;
      for (int j = len(rng); j > 0; --j) sub.push_back(random_scalar(rng, inner));
      items.push_back(omt::gguf::make_array(inner, std::move(sub)));
    }
    return omt::gguf::make_array(MetaType::Array, std::move(items));
  }
  const MetaType elem = scalars[pick(rng) % 12];
  std::vector<MetaValue> items;
  for (int i = 0; i < n; ++i) items.push_back(random_scalar(rng, elem));
  return omt::gguf::make_array(elem, std::move(items));
}

}  // namespace

omt::gguf::WriteSpec random_spec(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  omt::gguf::WriteSpec s;
  static const std::uint64_t aligns[] = {32, 32, 32, 8, 16, 64, 128};
  s.alignment = aligns[rng() % 7];
  s.metadata.emplace_back("general.architecture", "llama");
  s.metadata.emplace_back("general.name", "spec-" + std::to_string(seed));
  const int n_meta = static_cast<int>(rng() % 12);
  for (int i = 0; i < n_meta; ++i) s.metadata.emplace_back("test.key." + std::to_string(i), random_value(rng, 0));

  static const QuantType types[] = {QuantType::F32,  QuantType::F16,  QuantType::Q8_0, QuantType::Q2_K,
                                    QuantType::Q3_K, QuantType::Q4_K, QuantType::Q5_K, QuantType::Q6_K};
  std::normal_distribution<float> nd(0.0f, 1.0f);
  const int n_tensors = static_cast<int>(rng() % 7);
  for (int i = 0; i < n_tensors; ++i) {
    const QuantType t = types[rng() % 8];
    const std::uint64_t block = omt::quant::type_info(t)->block_elems;
    std::vector<std::uint64_t> dims;
    const std::uint64_t rank = 1 + rng() % 3;
    dims.push_back(block * (1 + rng() % 3) * (block == 1 ? 7 : 1));
    for (std::uint64_t r = 1; r < rank; ++r) dims.push_back(1 + rng() % 3);
    std::uint64_t n = 1;
    for (auto d : dims) n *= d;
    std::vector<float> values(n);
    for (auto& v : values) v = nd(rng);
    s.tensors.push_back({"blk." + std::to_string(i) + ".weight", dims, t, omt::quant::quantize(t, values), {}});
  }
  return s;
}

std::string round_trip_difference(const omt::gguf::WriteSpec& spec, const omt::gguf::GgufFile& parsed) {
  if (parsed.alignment != spec.alignment) return "alignment";
  // The writer adds general.alignment in front when it is not the default.
  std::size_t skip = 0;
  if (spec.alignment != omt::gguf::kDefaultAlignment && !spec.metadata.empty() &&
      spec.metadata.front().first != omt::gguf::kAlignmentKey) {
    skip = 1;
  }
  if (parsed.metadata.size() != spec.metadata.size() + skip) return "metadata count";
  for (std::size_t i = 0; i < spec.metadata.size(); ++i) {
    if (parsed.metadata[i + skip].first != spec.metadata[i].first) return "metadata key " + spec.metadata[i].first;
    if (!(parsed.metadata[i + skip].second == spec.metadata[i].second)) return "metadata value " + spec.metadata[i].first;
  }
  if (parsed.tensors.size() != spec.tensors.size()) return "tensor count";
  for (std::size_t i = 0; i < spec.tensors.size(); ++i) {
    const auto& want = spec.tensors[i];
    const auto& got = parsed.tensors[i];
    if (got.name != want.name || got.dims != want.dims || got.type != want.type) return "tensor info " + want.name;
    const auto view = omt::gguf::tensor_view(parsed, want.name);
    if (view.data.size() != want.payload.size() ||
        std::memcmp(view.data.data(), want.payload.data(), want.payload.size()) != 0) {
      return "payload " + want.name;
    }
  }
  return {};
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace fx
