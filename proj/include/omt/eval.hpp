#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "omt/pipeline.hpp"

// Corpus cleaning, BLEU and latency benchmarking.
namespace omt::eval {

struct ParallelPair {
  std::string source;
  std::string target;
  std::string origin;
};

// UTF-8 TSV, source<TAB>target per line. Lines without exactly one tab or
// with invalid UTF-8 are counted, not returned. Blank lines are skipped.
struct TsvCorpus {
  std::vector<ParallelPair> pairs;
  std::size_t malformed = 0;
};

TsvCorpus parse_tsv(std::istream& in, const std::string& origin = {});
TsvCorpus read_tsv(const std::filesystem::path& path);
void write_tsv(std::ostream& out, std::span<const ParallelPair> pairs);

struct CleaningRules {
  double min_ratio = 1.0 / 3.0;  // source words / target words
  double max_ratio = 3.0;
};

struct CleaningReport {
  std::size_t input_count = 0;
  std::size_t kept_count = 0;
  struct {
    std::size_t duplicates = 0;
    std::size_t empties = 0;
    std::size_t ratio_outliers = 0;
    std::size_t malformed = 0;
    std::size_t encoding_fixes = 0;  // repairs, not removals
  } removed;

  std::size_t removed_total() const noexcept {
    return removed.duplicates + removed.empties + removed.ratio_outliers + removed.malformed;
  }
};

struct CleaningResult {
  std::vector<ParallelPair> pairs;
  CleaningReport report;
};

CleaningResult clean_corpus(std::span<const ParallelPair> pairs, const CleaningRules& rules = {});
// Includes the TSV reader's malformed lines in the report.
CleaningResult clean_corpus(const TsvCorpus& corpus, const CleaningRules& rules = {});

enum class Smoothing { None, AddOne };

std::string_view smoothing_name(Smoothing s) noexcept;
Smoothing parse_smoothing(std::string_view name);

struct BleuOptions {
  int max_n = 4;
  Smoothing smoothing = Smoothing::None;
};

struct BleuReport {
  std::vector<double> precisions;  // p1..pN as used in the score
  std::vector<std::uint64_t> matches;
  std::vector<std::uint64_t> totals;
  double brevity_penalty = 0.0;
  double score = 0.0;  // 0..1
  std::uint64_t hyp_len = 0;
  std::uint64_t ref_len = 0;
  Smoothing smoothing = Smoothing::None;

  double score_100() const noexcept { return score * 100.0; }
};

BleuReport bleu(std::span<const std::string> hypotheses, std::span<const std::string> references,
                const BleuOptions& options = {});

struct BenchOptions {
  int reps = 1;
  bool warmup = true;
};

struct LatencyStats {
  double mean = 0.0;
  double p50 = 0.0;
  double p95 = 0.0;
};

struct BenchReport {
  std::string model_name;
  std::string quant_type;
  std::string prompt_set_id;
  std::size_t prompt_count = 0;
  int reps = 0;
  std::size_t warmup_runs = 0;
  std::size_t timed_runs = 0;
  std::uint64_t generated_tokens = 0;
  double tokens_per_sec = 0.0;
  LatencyStats ms_per_sentence;
  std::vector<double> sentence_ms;  // one per timed run, in run order
  std::uint64_t peak_resident_memory_bytes = 0;
};

// Nearest-rank percentile of an unsorted sample; q in [0, 1].
double percentile(std::vector<double> values, double q);
std::string prompt_set_id(std::span<const std::string> prompts);
std::uint64_t peak_resident_memory_bytes();

// Runs every prompt `reps` times, sequentially, after one untimed warm-up
// generation.
BenchReport bench(pipeline::Session& session, std::span<const std::string> prompts, const BenchOptions& options = {});

struct CompareOptions {
  pipeline::SessionOptions session;
  BenchOptions bench;
  BleuOptions bleu;
};

struct ComparisonReport {
  std::string file_a;
  std::string file_b;
  std::string quant_a;
  std::string quant_b;
  std::uint64_t size_a = 0;
  std::uint64_t size_b = 0;
  double size_reduction_pct = 0.0;
  double ms_a = 0.0;  // mean ms per sentence
  double ms_b = 0.0;
  double speedup_pct = 0.0;
  double bleu_a = 0.0;  // 0..1
  double bleu_b = 0.0;
  double bleu_delta = 0.0;
  std::size_t testset_size = 0;
  BenchReport bench_a;
  BenchReport bench_b;
};

ComparisonReport compare_quants(const std::filesystem::path& file_a, const std::filesystem::path& file_b,
                                std::span<const ParallelPair> testset, const CompareOptions& options = {});

// Stable machine-readable forms (field names are part of the interface).
nlohmann::json to_json(const CleaningReport& r);
nlohmann::json to_json(const BleuReport& r);
nlohmann::json to_json(const BenchReport& r);
nlohmann::json to_json(const ComparisonReport& r);

std::string format_table(const CleaningReport& r);
std::string format_table(const BleuReport& r);
std::string format_table(const BenchReport& r);
std::string format_table(const ComparisonReport& r);

}  // namespace omt::eval
