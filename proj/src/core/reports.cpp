#include <cstdio>
#include <sstream>

#include "omt/eval.hpp"

namespace omt::eval {
namespace {

using nlohmann::json;

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

class Table {
 public:
  explicit Table(std::string title) : title_(std::move(title)) {}

  Table& row(const std::string& k, const std::string& v) {
    rows_.emplace_back(k, v);
    width_ = std::max(width_, k.size());
    return *this;
  }
  Table& row(const std::string& k, std::uint64_t v) { return row(k, std::to_string(v)); }

  std::string str() const {
    std::ostringstream out;
    out << title_ << '\n';
    for (const auto& [k, v] : rows_) out << "  " << k << std::string(width_ - k.size() + 2, ' ') << v << '\n';
    return out.str();
  }

 private:
  std::string title_;
  std::vector<std::pair<std::string, std::string>> rows_;
  std::size_t width_ = 0;
};

json latency_json(const LatencyStats& s) { return {{"mean", s.mean}, {"p50", s.p50}, {"p95", s.p95}}; }

}  // namespace

json to_json(const CleaningReport& r) {
  return {{"input_count", r.input_count},
          {"kept_count", r.kept_count},
          {"removed",
           {{"duplicates", r.removed.duplicates},
            {"empties", r.removed.empties},
            {"ratio_outliers", r.removed.ratio_outliers},
            {"malformed", r.removed.malformed},
            {"encoding_fixes", r.removed.encoding_fixes}}}};
}

json to_json(const BleuReport& r) {
  return {{"score", r.score},
          {"score_100", r.score_100()},
          {"precisions", r.precisions},
          {"matches", r.matches},
          {"totals", r.totals},
          {"brevity_penalty", r.brevity_penalty},
          {"hyp_len", r.hyp_len},
          {"ref_len", r.ref_len},
          {"smoothing", smoothing_name(r.smoothing)}};
}

json to_json(const BenchReport& r) {
  return {{"model", r.model_name},
          {"quant_type", r.quant_type},
          {"prompt_set_id", r.prompt_set_id},
          {"prompt_count", r.prompt_count},
          {"reps", r.reps},
          {"warmup_runs", r.warmup_runs},
          {"timed_runs", r.timed_runs},
          {"generated_tokens", r.generated_tokens},
          {"tokens_per_sec", r.tokens_per_sec},
          {"ms_per_sentence", latency_json(r.ms_per_sentence)},
          {"sentence_ms", r.sentence_ms},
          {"peak_resident_memory_bytes", r.peak_resident_memory_bytes}};
}

json to_json(const ComparisonReport& r) {
  return {{"file_a", r.file_a},
          {"file_b", r.file_b},
          {"quant_a", r.quant_a},
          {"quant_b", r.quant_b},
          {"size_a", r.size_a},
          {"size_b", r.size_b},
          {"size_reduction_pct", r.size_reduction_pct},
          {"ms_a", r.ms_a},
          {"ms_b", r.ms_b},
          {"speedup_pct", r.speedup_pct},
          {"bleu_a", r.bleu_a},
          {"bleu_b", r.bleu_b},
          {"bleu_delta", r.bleu_delta},
          {"bleu_delta_100", r.bleu_delta * 100.0},
          {"testset_size", r.testset_size},
          {"bench_a", to_json(r.bench_a)},
          {"bench_b", to_json(r.bench_b)}};
}

std::string format_table(const CleaningReport& r) {
  return Table("cleaning")
      .row("input", r.input_count)
      .row("kept", r.kept_count)
      .row("duplicates", r.removed.duplicates)
      .row("empties", r.removed.empties)
      .row("ratio outliers", r.removed.ratio_outliers)
      .row("malformed", r.removed.malformed)
      .row("encoding fixes", r.removed.encoding_fixes)
      .str();
}

std::string format_table(const BleuReport& r) {
  Table t("bleu");
  t.row("score", fixed(r.score, 4) + "  (" + fixed(r.score_100(), 2) + " / 100)");
  for (std::size_t n = 0; n < r.precisions.size(); ++n) {
    t.row("p" + std::to_string(n + 1),
          fixed(r.precisions[n], 4) + "  (" + std::to_string(r.matches[n]) + "/" + std::to_string(r.totals[n]) + ")");
  }
  return t.row("brevity penalty", fixed(r.brevity_penalty, 4))
      .row("hyp len", r.hyp_len)
      .row("ref len", r.ref_len)
      .row("smoothing", std::string(smoothing_name(r.smoothing)))
      .str();
}

std::string format_table(const BenchReport& r) {
  return Table("bench")
      .row("model", r.model_name.empty() ? "-" : r.model_name)
      .row("quant", r.quant_type)
      .row("prompt set", r.prompt_set_id)
      .row("timed runs", std::to_string(r.timed_runs) + "  (" + std::to_string(r.prompt_count) + " prompts x " +
                             std::to_string(r.reps) + " reps, " + std::to_string(r.warmup_runs) + " warm-up)")
      .row("tokens/sec", fixed(r.tokens_per_sec, 2))
      .row("ms/sentence mean", fixed(r.ms_per_sentence.mean, 2))
      .row("ms/sentence p50", fixed(r.ms_per_sentence.p50, 2))
      .row("ms/sentence p95", fixed(r.ms_per_sentence.p95, 2))
      .row("peak RSS", fixed(static_cast<double>(r.peak_resident_memory_bytes) / (1024.0 * 1024.0), 1) + " MiB")
      .str();
}

std::string format_table(const ComparisonReport& r) {
  return Table("compare")
      .row("file a", r.file_a + "  [" + r.quant_a + "]")
      .row("file b", r.file_b + "  [" + r.quant_b + "]")
      .row("size a", r.size_a)
      .row("size b", r.size_b)
      .row("size reduction", fixed(r.size_reduction_pct, 2) + " %")
      .row("ms/sentence a", fixed(r.ms_a, 2))
      .row("ms/sentence b", fixed(r.ms_b, 2))
      .row("speedup", fixed(r.speedup_pct, 2) + " %")
      .row("bleu a", fixed(r.bleu_a, 4))
      .row("bleu b", fixed(r.bleu_b, 4))
      .row("bleu delta", fixed(r.bleu_delta, 4) + "  (" + fixed(r.bleu_delta * 100.0, 2) + " / 100)")
      .str();
}

}  // namespace omt::eval
