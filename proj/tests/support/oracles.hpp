#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fixtures.hpp"

// Reference implementations written straight from the format and model
// descriptions, sharing no code with the engine.
namespace oracle {

double f16(std::uint16_t h);

// Walks the block layout element by element; returns doubles.
std::vector<double> dequant_block(omt::quant::QuantType type, const std::uint8_t* block);
std::vector<double> dequant_row(omt::quant::QuantType type, std::span<const std::byte> row, std::size_t n);

// Full-sequence llama forward pass in double precision, no cache.
// Returns logits for every position, row-major [pos][vocab].
std::vector<double> forward(const fx::TinyModel& m, std::span<const std::int32_t> tokens);

// Same, with matrices first run through quantize + dequant_block.
std::vector<double> forward_dequantized(const fx::TinyModel& m, std::span<const std::int32_t> tokens);

}  // namespace oracle
