#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

// Random-weight model with the published TinyLlama 1.1B geometry, for
// timing and memory measurements when the real file is not at hand.
struct SynthOptions {
  std::filesystem::path out;
  std::filesystem::path vocab;  // GGUF file supplying tokenizer metadata
  std::uint32_t layers = 22;
  std::uint32_t embed = 2048;
  std::uint32_t heads = 32;
  std::uint32_t kv_heads = 4;
  std::uint32_t ffn = 5632;
  std::uint32_t context = 2048;
  std::string mix = "q4_k_m";  // q4_k_m, q8_0 or f32
  std::uint64_t seed = 1;
};

void write_synthetic_model(const SynthOptions& opt);
