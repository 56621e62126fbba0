#include <algorithm>
#include <chrono>
#include <cmath>

#include "omt/error.hpp"
#include "omt/model.hpp"

namespace omt::llm {
namespace {

double ms_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

TokenId argmax(std::span<const float> logits) {
  if (logits.empty()) fail(Errc::EmptyInput, "argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return static_cast<TokenId>(best);
}

TokenId Sampler::sample(std::span<const float> logits, float temperature) {
  if (logits.empty()) fail(Errc::EmptyInput, "sampling from empty logits");
  if (!(temperature > 0.0f)) return argmax(logits);
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((static_cast<double>(logits[i]) - mx) / temperature);
    total += p[i];
  }
  // 53 random bits as a double in [0, 1).
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53 * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return static_cast<TokenId>(i);
  }
  return argmax(logits);
}

TokenId sample(std::span<const float> logits, const GenParams& params, Sampler& sampler) {
  return sampler.sample(logits, params.temperature);
}

GenResult generate(const Model& model, std::span<const TokenId> prompt, const GenParams& params, KvCache& cache,
                   const TokenSink& sink) {
  if (prompt.empty()) fail(Errc::EmptyInput, "prompt has no tokens");
  if (params.max_new_tokens < 0) fail(Errc::InvalidArgument, "max_new_tokens must be >= 0");
  cache.clear();
  if (prompt.size() >= cache.capacity()) {
    fail(Errc::ContextOverflow, "prompt of " + std::to_string(prompt.size()) + " tokens leaves no room in a context of " +
                                    std::to_string(cache.capacity()));
  }

  GenResult res;
  Sampler sampler(params.seed);
  auto start = std::chrono::steady_clock::now();
  std::vector<float> logits = forward(model, prompt, cache);
  res.prompt_ms = ms_since(start);
  start = std::chrono::steady_clock::now();

  while (static_cast<int>(res.tokens.size()) < params.max_new_tokens) {
    const TokenId next = sample(logits, params, sampler);
    if (std::find(params.stop_token_ids.begin(), params.stop_token_ids.end(), next) != params.stop_token_ids.end()) {
      res.stopped = true;
      break;
    }
    res.tokens.push_back(next);
    if (sink && !sink(next)) {
      res.cancelled = true;
      break;
    }
    if (static_cast<int>(res.tokens.size()) >= params.max_new_tokens) break;
    if (cache.filled() >= cache.capacity()) {
      res.truncated = true;
      break;
    }
    const TokenId one[1] = {next};
    logits = forward(model, one, cache);
  }
  res.generate_ms = ms_since(start);
  return res;
}

}  // namespace omt::llm
