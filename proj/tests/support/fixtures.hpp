#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "omt/gguf.hpp"
#include "omt/model.hpp"
#include "omt/pipeline.hpp"
#include "omt/tokenizer.hpp"

namespace fx {

std::filesystem::path data_path(const std::string& name);
std::filesystem::path temp_path(const std::string& name);

// Float weights of a llama-shaped model, kept so oracles can use them.
struct TinyModel {
  std::uint32_t layers = 2;
  std::uint32_t embed = 8;
  std::uint32_t heads = 2;
  std::uint32_t kv_heads = 1;
  std::uint32_t ffn = 16;
  std::uint32_t vocab = 16;
  std::uint32_t context = 32;
  float rope_theta = 10000.0f;
  float eps = 1e-5f;
  omt::quant::QuantType matrix_type = omt::quant::QuantType::F32;
  bool tied_output = false;
  bool llama_vocab = false;  // copy the 32000-token tokenizer from tests/data
  std::string chat_template;
  std::uint64_t seed = 7;
  float weight_scale = 0.5f;

  // name -> (dims, values); matrices are row-major [rows][cols].
  std::map<std::string, std::pair<std::vector<std::uint64_t>, std::vector<float>>> weights;

  void init_weights();
  omt::gguf::WriteSpec spec() const;
  std::vector<std::byte> bytes() const;
  std::shared_ptr<const omt::gguf::GgufFile> file() const;
};

struct Loaded {
  std::shared_ptr<const omt::gguf::GgufFile> file;
  std::shared_ptr<const omt::llm::Model> model;
  std::shared_ptr<const omt::tok::Vocab> vocab;
};

Loaded load(const TinyModel& m);

// Small 16-token vocabulary used by the default TinyModel.
void add_small_vocab(omt::gguf::Metadata& md, std::uint32_t n);

// Random container spec: mixed tensor types, scalar/string/nested-array
// metadata, occasionally a non-default alignment.
omt::gguf::WriteSpec random_spec(std::uint64_t seed);
// Empty when parse(write(spec)) reproduces spec; otherwise a description of
// the first difference.
std::string round_trip_difference(const omt::gguf::WriteSpec& spec, const omt::gguf::GgufFile& parsed);

std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);

}  // namespace fx
