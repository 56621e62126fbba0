#include <doctest.h>

#include <functional>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "omt/error.hpp"
#include "omt/eval.hpp"

using namespace omt;
using namespace omt::eval;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::IoError;
}

std::vector<std::string> sample_refs() {
  return {"the cat is on the mat", "there is a cat on the mat", "Tôi yêu Việt Nam",
          "xin chào các bạn", "a b c d e f g", "hello world again and again"};
}

std::filesystem::path write_model(const fx::TinyModel& m, const std::string& name) {
  const auto path = fx::temp_path(name);
  gguf::write_file(m.spec(), path);
  return path;
}

}  // namespace

TEST_CASE("tsv parsing") {
  std::istringstream in("a\tb\n\nno tab\nx\ty\tz\nc\td\r\nbad\xFF\tq\n");
  const auto c = parse_tsv(in, "test");
  REQUIRE(c.pairs.size() == 2);
  CHECK(c.pairs[1].source == "c");
  CHECK(c.pairs[1].target == "d");
  CHECK(c.pairs[0].origin == "test");
  CHECK(c.malformed == 3);
  std::ostringstream out;
  write_tsv(out, c.pairs);
  CHECK(out.str() == "a\tb\nc\td\n");
}

TEST_CASE("cleaning") {
  SUBCASE("duplicates") {
    const std::vector<ParallelPair> p = {{"xin chào", "hello", ""}, {"xin chào", "hello", ""}};
    const auto r = clean_corpus(p);
    CHECK(r.pairs.size() == 1);
    CHECK(r.report.removed.duplicates == 1);
    CHECK(r.report.input_count == 2);
    CHECK(r.report.kept_count == 1);
  }
  SUBCASE("decomposed and precomposed diacritics") {
    const std::vector<ParallelPair> p = {{"cha\xCC\x80o ba\xCC\xA3n", "hello friend", ""},
                                         {"ch\xC3\xA0o b\xE1\xBA\xA1n", "hello friend", ""}};
    const auto r = clean_corpus(p);
    CHECK(r.pairs.size() == 1);
    CHECK(r.report.removed.duplicates == 1);
    CHECK(r.report.removed.encoding_fixes == 1);
    CHECK(r.pairs[0].source == "ch\xC3\xA0o b\xE1\xBA\xA1n");
  }
  SUBCASE("length ratio") {
    std::string forty;
    for (int i = 0; i < 40; ++i) forty += "word ";
    const std::vector<ParallelPair> p = {{"one", forty, ""}, {"one two three", "one", ""}, {"a b c d", "x", ""}};
    const auto r = clean_corpus(p);
    CHECK(r.report.removed.ratio_outliers == 2);
    CHECK(r.pairs.size() == 1);
  }
  SUBCASE("empties and malformed") {
    const std::vector<ParallelPair> p = {{"  ", "x", ""}, {"x", "", ""}, {"a\tb", "c", ""}, {"\xC3", "c", ""}};
    const auto r = clean_corpus(p);
    CHECK(r.report.removed.empties == 2);
    CHECK(r.report.removed.malformed == 2);
    CHECK(r.report.removed_total() == 4);
    CHECK(r.pairs.empty());
  }
  SUBCASE("idempotent") {
    std::istringstream in("a b\tc d\n a b \tc d\nx\ty\tz\nTiếng Việt\tVietnamese language\nmot\thai ba bon nam\n");
    const auto first = clean_corpus(parse_tsv(in));
    CHECK(first.report.removed.malformed == 1);
    const auto second = clean_corpus(first.pairs);
    CHECK(second.report.removed_total() == 0);
    CHECK(second.report.removed.encoding_fixes == 0);
    REQUIRE(second.pairs.size() == first.pairs.size());
    for (std::size_t i = 0; i < first.pairs.size(); ++i) {
      CHECK(second.pairs[i].source == first.pairs[i].source);
      CHECK(second.pairs[i].target == first.pairs[i].target);
    }
  }
  const auto j = to_json(CleaningReport{});
  for (const char* k : {"duplicates", "empties", "ratio_outliers", "malformed", "encoding_fixes"}) {
    CHECK(j.at("removed").contains(k));
  }
}

TEST_CASE("bleu identity") {
  const auto refs = sample_refs();
  const auto r = bleu(refs, refs);
  CHECK(r.score == 1.0);
  CHECK(r.brevity_penalty == 1.0);
}

TEST_CASE("bleu clipping") {
  const std::vector<std::string> h = {"the the the the the the the"};
  const std::vector<std::string> g = {"the cat is on the mat"};
  const auto r = bleu(h, g);
  CHECK(r.matches[0] == 2);
  CHECK(r.totals[0] == 7);
  CHECK(r.precisions[0] == 2.0 / 7.0);
}

TEST_CASE("bleu zero overlap") {
  const std::vector<std::string> h = {"alpha beta gamma delta"};
  const std::vector<std::string> g = {"one two three four"};
  CHECK(bleu(h, g).score == 0.0);
  BleuOptions add_one;
  add_one.smoothing = Smoothing::AddOne;
  CHECK(bleu(h, g, add_one).score == 0.0);
  const std::vector<std::string> partial = {"one two five six"};
  CHECK(bleu(partial, g).score == 0.0);
  CHECK(bleu(partial, g, add_one).score > 0.0);
}

TEST_CASE("bleu is invariant under corpus permutation") {
  const auto refs = sample_refs();
  std::vector<std::string> hyps = {"the cat is on the red mat", "a cat is on the mat", "Tôi yêu Hà Nội",
                                   "xin chào bạn", "a b c e f g", "hello again world"};
  const double base = bleu(hyps, refs).score;
  CHECK(base > 0.0);
  std::vector<std::size_t> idx(hyps.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(5);
  for (int s = 0; s < 20; ++s) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::string> h, g;
    for (auto i : idx) {
      h.push_back(hyps[i]);
      g.push_back(refs[i]);
    }
    CHECK(bleu(h, g).score == base);
  }
}

TEST_CASE("bleu brevity and errors") {
  const std::vector<std::string> h = {"the cat"};
  const std::vector<std::string> g = {"the cat is on the mat"};
  const auto r = bleu(h, g);
  CHECK(r.brevity_penalty == doctest::Approx(std::exp(1.0 - 6.0 / 2.0)));
  CHECK(r.hyp_len == 2);
  CHECK(r.ref_len == 6);
  CHECK(code_of([&] { bleu(h, std::vector<std::string>{}); }) == Errc::LengthMismatch);
  CHECK(code_of([] { bleu(std::vector<std::string>{}, std::vector<std::string>{}); }) == Errc::EmptyCorpus);
  CHECK(parse_smoothing("add-one") == Smoothing::AddOne);
  CHECK(code_of([] { parse_smoothing("floor"); }) == Errc::InvalidArgument);
  const auto j = to_json(r);
  for (const char* k : {"score", "precisions", "brevity_penalty", "hyp_len", "ref_len", "smoothing"}) CHECK(j.contains(k));
}

TEST_CASE("percentile") {
  const std::vector<double> v = {5, 1, 4, 2, 3};
  CHECK(percentile(v, 0.5) == 3);
  CHECK(percentile(v, 0.95) == 5);
  CHECK(percentile(v, 0.0) == 1);
  CHECK(percentile({}, 0.5) == 0.0);
}

TEST_CASE("bench counts runs") {
  fx::TinyModel m;
  m.context = 512;
  m.init_weights();
  const auto l = fx::load(m);
  pipeline::SessionOptions o;
  o.gen.max_new_tokens = 4;
  pipeline::Session s(l.model, l.vocab, o);
  std::vector<std::string> prompts;
  for (int i = 0; i < 10; ++i) prompts.push_back(std::string(1 + i % 3, 'a') + "bcd");
  BenchOptions b;
  b.reps = 3;
  const auto r = bench(s, prompts, b);
  CHECK(r.timed_runs == 30);
  CHECK(r.sentence_ms.size() == 30);
  CHECK(r.warmup_runs == 1);
  CHECK(r.prompt_count == 10);
  CHECK(r.ms_per_sentence.p50 <= r.ms_per_sentence.p95);
  CHECK(r.peak_resident_memory_bytes > 0);
  CHECK(r.prompt_set_id == prompt_set_id(prompts));
  CHECK(r.quant_type == "F32");
  const auto j = to_json(r);
  for (const char* k : {"tokens_per_sec", "ms_per_sentence", "sentence_ms", "peak_resident_memory_bytes", "timed_runs"}) {
    CHECK(j.contains(k));
  }
  b.reps = 0;
  CHECK(code_of([&] { bench(s, prompts, b); }) == Errc::InvalidArgument);
}

TEST_CASE("compare_quants") {
  fx::TinyModel m;
  m.embed = 256;
  m.heads = 4;
  m.kv_heads = 2;
  m.ffn = 512;
  m.context = 512;
  m.weight_scale = 0.06f;
  m.init_weights();
  m.matrix_type = quant::QuantType::Q8_0;
  const auto q8 = write_model(m, "cmp_q8.gguf");
  m.matrix_type = quant::QuantType::Q4_K;
  const auto q4 = write_model(m, "cmp_q4.gguf");
  const std::vector<ParallelPair> testset = {{"abcd", "ab cd", ""}, {"ab", "ab", ""}, {"cdab", "cd ab", ""}};
  CompareOptions o;
  o.session.gen.max_new_tokens = 4;
  o.bleu.smoothing = Smoothing::AddOne;

  const auto same = compare_quants(q8, q8, testset, o);
  CHECK(same.size_reduction_pct == 0.0);
  CHECK(same.bleu_delta == 0.0);
  CHECK(same.quant_a == "Q8_0");
  CHECK(same.testset_size == 3);

  const auto diff = compare_quants(q8, q4, testset, o);
  CHECK(diff.size_a == std::filesystem::file_size(q8));
  CHECK(diff.size_b == std::filesystem::file_size(q4));
  CHECK(diff.size_reduction_pct > 0.0);
  CHECK(std::isfinite(diff.bleu_delta));
  CHECK(diff.quant_b == "Q4_K");
  const auto j = to_json(diff);
  for (const char* k : {"size_reduction_pct", "speedup_pct", "bleu_delta", "bench_a", "bench_b"}) CHECK(j.contains(k));

  fx::TinyModel other;
  other.context = 512;
  other.init_weights();
  const auto small = write_model(other, "cmp_small.gguf");
  CHECK(code_of([&] { compare_quants(q8, small, testset, o); }) == Errc::ArchitectureMismatch);
  CHECK(code_of([&] { compare_quants(q8, q8, {}, o); }) == Errc::EmptyCorpus);
  for (const auto& p : {q8, q4, small}) std::filesystem::remove(p);
}
