#include "synth.hpp"

#include <cstring>
#include <random>

#include "omt/error.hpp"
#include "omt/gguf.hpp"
#include "omt/quant.hpp"

namespace {

using omt::quant::QuantType;

constexpr const char* kChatTemplate =
    "{% for message in messages %}\n{% if message['role'] == 'user' %}\n{{ '<|user|>\n' + message['content'] + "
    "eos_token }}\n{% elif message['role'] == 'system' %}\n{{ '<|system|>\n' + message['content'] + eos_token "
    "}}\n{% elif message['role'] == 'assistant' %}\n{{ '<|assistant|>\n'  + message['content'] + eos_token "
    "}}\n{% endif %}\n{% if loop.last and add_generation_prompt %}\n{{ '<|assistant|>' }}\n{% endif %}\n{% endfor %}";

void put_f16(std::byte* p, float v) {
  const std::uint16_t h = omt::quant::f32_to_f16(v);
  std::memcpy(p, &h, 2);
}

// Random block bytes with scale fields small enough to keep activations sane.
std::vector<std::byte> random_payload(QuantType type, std::uint64_t rows, std::uint64_t cols, std::mt19937_64& rng) {
  std::vector<std::byte> out(omt::quant::byte_size(type, rows * cols));
  if (type == QuantType::F32) {
    std::normal_distribution<float> nd(0.0f, 0.02f);
    auto* f = reinterpret_cast<float*>(out.data());
    for (std::size_t i = 0; i < rows * cols; ++i) f[i] = nd(rng);
    return out;
  }
  for (std::size_t i = 0; i + 8 <= out.size(); i += 8) {
    const std::uint64_t r = rng();
    std::memcpy(out.data() + i, &r, 8);
  }
  const auto info = *omt::quant::type_info(type);
  const std::size_t blocks = out.size() / info.block_bytes;
  for (std::size_t b = 0; b < blocks; ++b) {
    std::byte* p = out.data() + b * info.block_bytes;
    switch (type) {
      case QuantType::Q8_0: put_f16(p, 2e-4f); break;
      case QuantType::Q4_K:
        put_f16(p, 2e-4f);
        put_f16(p + 2, 1e-4f);
        break;
      case QuantType::Q6_K: put_f16(p + 208, 1e-5f); break;
      default: omt::fail(omt::Errc::UnsupportedQuantType, "synth cannot fill this type");
    }
  }
  return out;
}

// Which attn_v / ffn_down layers get the larger type in the Q4_K_M recipe.
bool more_bits(std::uint32_t i, std::uint32_t n) { return i < n / 8 || i >= 7 * n / 8 || (i - n / 8) % 3 == 2; }

}  // namespace

void write_synthetic_model(const SynthOptions& opt) {
  const auto vf = omt::gguf::open(opt.vocab);
  const auto* tokens = vf.find("tokenizer.ggml.tokens");
  if (!tokens) omt::fail(omt::Errc::MissingTokenizerMetadata, opt.vocab.string() + " has no tokenizer");
  const auto vocab = static_cast<std::uint32_t>(tokens->as_array().items.size());

  QuantType base = QuantType::F32, big = QuantType::F32;
  std::uint32_t file_type = 0;
  if (opt.mix == "q4_k_m") {
    base = QuantType::Q4_K;
    big = QuantType::Q6_K;
    file_type = 15;
  } else if (opt.mix == "q8_0") {
    base = big = QuantType::Q8_0;
    file_type = 7;
  } else if (opt.mix != "f32") {
    omt::fail(omt::Errc::InvalidArgument, "unknown mix " + opt.mix);
  }

  omt::gguf::WriteSpec spec;
  auto& md = spec.metadata;
  md.emplace_back("general.architecture", "llama");
  md.emplace_back("general.name", "synthetic-tinyllama-" + opt.mix);
  md.emplace_back("general.file_type", file_type);
  md.emplace_back("llama.block_count", opt.layers);
  md.emplace_back("llama.embedding_length", opt.embed);
  md.emplace_back("llama.attention.head_count", opt.heads);
  md.emplace_back("llama.attention.head_count_kv", opt.kv_heads);
  md.emplace_back("llama.feed_forward_length", opt.ffn);
  md.emplace_back("llama.context_length", opt.context);
  md.emplace_back("llama.rope.freq_base", 10000.0f);
  md.emplace_back("llama.attention.layer_norm_rms_epsilon", 1e-5f);
  md.emplace_back("llama.vocab_size", vocab);
  for (const auto& [k, v] : vf.metadata) {
    if (k.rfind("tokenizer.", 0) == 0 && k != "tokenizer.chat_template") md.emplace_back(k, v);
  }
  md.emplace_back("tokenizer.chat_template", kChatTemplate);

  std::mt19937_64 rng(opt.seed);
  const std::uint64_t d = opt.embed, kv = opt.embed / opt.heads * opt.kv_heads, ff = opt.ffn;
  auto matrix = [&](std::string name, QuantType t, std::uint64_t rows, std::uint64_t cols) {
    spec.tensors.push_back({std::move(name), {cols, rows}, t, random_payload(t, rows, cols, rng), {}});
  };
  auto ones = [&](std::string name) {
    std::vector<std::byte> p(d * sizeof(float));
    const float one = 1.0f;
    for (std::size_t i = 0; i < d; ++i) std::memcpy(p.data() + i * 4, &one, 4);
    spec.tensors.push_back({std::move(name), {d}, QuantType::F32, std::move(p), {}});
  };
  matrix("token_embd.weight", base, vocab, d);
  ones("output_norm.weight");
  matrix("output.weight", big, vocab, d);
  for (std::uint32_t l = 0; l < opt.layers; ++l) {
    const std::string p = "blk." + std::to_string(l) + ".";
    const QuantType vd = more_bits(l, opt.layers) ? big : base;
    ones(p + "attn_norm.weight");
    matrix(p + "attn_q.weight", base, d, d);
    matrix(p + "attn_k.weight", base, kv, d);
    matrix(p + "attn_v.weight", vd, kv, d);
    matrix(p + "attn_output.weight", base, d, d);
    ones(p + "ffn_norm.weight");
    matrix(p + "ffn_gate.weight", base, ff, d);
    matrix(p + "ffn_up.weight", base, ff, d);
    matrix(p + "ffn_down.weight", vd, d, ff);
  }
  omt::gguf::write_file(spec, opt.out);
}
