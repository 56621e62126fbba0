#include <sys/resource.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "omt/error.hpp"
#include "omt/eval.hpp"

namespace omt::eval {

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double rank = std::ceil(std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size()));
  const std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return values[std::min(idx, values.size() - 1)];
}

std::string prompt_set_id(std::span<const std::string> prompts) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (const auto& p : prompts) {
    for (unsigned char c : p) mix(c);
    mix('\n');
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t peak_resident_memory_bytes() {
  rusage ru{};
  if (getrusage(RUSAGE_SELF, &ru) != 0) return 0;
  return static_cast<std::uint64_t>(ru.ru_maxrss) * 1024;  // Linux reports KiB
}

BenchReport bench(pipeline::Session& session, std::span<const std::string> prompts, const BenchOptions& options) {
  if (options.reps < 1) fail(Errc::InvalidArgument, "reps must be at least 1");
  if (prompts.empty()) fail(Errc::EmptyCorpus, "bench needs at least one prompt");

  BenchReport r;
  r.model_name = session.model().name;
  r.quant_type = session.model().quant_label();
  r.prompt_set_id = prompt_set_id(prompts);
  r.prompt_count = prompts.size();
  r.reps = options.reps;
  if (options.warmup) {
    session.translate(prompts.front());
    r.warmup_runs = 1;
  }
  double gen_ms = 0.0;
  for (int rep = 0; rep < options.reps; ++rep) {
    for (const auto& p : prompts) {
      const auto turn = session.translate(p);
      r.sentence_ms.push_back(turn.total_ms);
      r.generated_tokens += turn.generated_tokens;
      gen_ms += turn.generate_ms;
    }
  }
  r.timed_runs = r.sentence_ms.size();
  r.tokens_per_sec = gen_ms > 0.0 ? static_cast<double>(r.generated_tokens) / (gen_ms / 1000.0) : 0.0;
  r.ms_per_sentence.mean =
      std::accumulate(r.sentence_ms.begin(), r.sentence_ms.end(), 0.0) / static_cast<double>(r.timed_runs);
  r.ms_per_sentence.p50 = percentile(r.sentence_ms, 0.50);
  r.ms_per_sentence.p95 = percentile(r.sentence_ms, 0.95);
  r.peak_resident_memory_bytes = peak_resident_memory_bytes();
  return r;
}

namespace {

struct Loaded {
  std::shared_ptr<const llm::Model> model;
  std::shared_ptr<const tok::Vocab> vocab;
};

Loaded load(const std::filesystem::path& path) {
  auto file = std::make_shared<const gguf::GgufFile>(gguf::open(path));
  auto vocab = std::make_shared<const tok::Vocab>(tok::load_vocab(*file));
  auto model = std::make_shared<const llm::Model>(llm::load_model(file));
  return {model, vocab};
}

void require_compatible(const Loaded& a, const Loaded& b) {
  const auto& x = a.model->config;
  const auto& y = b.model->config;
  if (a.model->architecture != b.model->architecture || x.n_layers != y.n_layers || x.embed_dim != y.embed_dim ||
      x.n_heads != y.n_heads || x.n_kv_heads != y.n_kv_heads || x.ffn_hidden_dim != y.ffn_hidden_dim ||
      x.vocab_size != y.vocab_size) {
    fail(Errc::ArchitectureMismatch, "the two models have different architectures");
  }
  if (a.vocab->pieces != b.vocab->pieces) fail(Errc::ArchitectureMismatch, "the two models have different vocabularies");
}

}  // namespace

ComparisonReport compare_quants(const std::filesystem::path& file_a, const std::filesystem::path& file_b,
                                std::span<const ParallelPair> testset, const CompareOptions& options) {
  if (testset.empty()) fail(Errc::EmptyCorpus, "comparison needs a non-empty test set");
  const Loaded a = load(file_a);
  const Loaded b = load(file_b);
  require_compatible(a, b);

  ComparisonReport r;
  r.file_a = file_a.string();
  r.file_b = file_b.string();
  r.quant_a = a.model->quant_label();
  r.quant_b = b.model->quant_label();
  r.size_a = std::filesystem::file_size(file_a);
  r.size_b = std::filesystem::file_size(file_b);
  r.size_reduction_pct =
      (static_cast<double>(r.size_a) - static_cast<double>(r.size_b)) / static_cast<double>(r.size_a) * 100.0;
  r.testset_size = testset.size();

  std::vector<std::string> sources, refs;
  for (const auto& p : testset) {
    sources.push_back(p.source);
    refs.push_back(p.target);
  }

  auto run = [&](const Loaded& m, BenchReport& bench_out) {
    pipeline::Session session(m.model, m.vocab, options.session);
    std::vector<std::string> hyps;
    for (const auto& s : sources) hyps.push_back(session.translate(s).output_text);
    bench_out = bench(session, sources, options.bench);
    return bleu(hyps, refs, options.bleu).score;
  };
  r.bleu_a = run(a, r.bench_a);
  r.bleu_b = run(b, r.bench_b);
  r.bleu_delta = r.bleu_a - r.bleu_b;
  r.ms_a = r.bench_a.ms_per_sentence.mean;
  r.ms_b = r.bench_b.ms_per_sentence.mean;
  r.speedup_pct = r.ms_a > 0.0 ? (r.ms_a - r.ms_b) / r.ms_a * 100.0 : 0.0;
  return r;
}

}  // namespace omt::eval
