#include <algorithm>
#include <cmath>
#include <map>

#include "omt/error.hpp"
#include "omt/eval.hpp"
#include "omt/text.hpp"

namespace omt::eval {
namespace {

using Ngram = std::vector<std::string_view>;

std::map<Ngram, std::uint64_t> count_ngrams(const std::vector<std::string_view>& toks, std::size_t n) {
  std::map<Ngram, std::uint64_t> counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++counts[Ngram(toks.begin() + i, toks.begin() + i + n)];
  return counts;
}

}  // namespace

std::string_view smoothing_name(Smoothing s) noexcept { return s == Smoothing::AddOne ? "add-one" : "none"; }

Smoothing parse_smoothing(std::string_view name) {
  if (name == "none") return Smoothing::None;
  if (name == "add-one") return Smoothing::AddOne;
  fail(Errc::InvalidArgument, "unknown smoothing '" + std::string(name) + "' (expected none or add-one)");
}

BleuReport bleu(std::span<const std::string> hyps, std::span<const std::string> refs, const BleuOptions& opt) {
  if (hyps.size() != refs.size()) {
    fail(Errc::LengthMismatch, std::to_string(hyps.size()) + " hypotheses but " + std::to_string(refs.size()) +
                                   " references");
  }
  if (hyps.empty()) fail(Errc::EmptyCorpus, "BLEU needs at least one sentence pair");
  if (opt.max_n < 1) fail(Errc::InvalidArgument, "max_n must be at least 1");
  const auto N = static_cast<std::size_t>(opt.max_n);

  BleuReport r;
  r.smoothing = opt.smoothing;
  r.matches.assign(N, 0);
  r.totals.assign(N, 0);
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const std::string h = text::nfc(hyps[s]);
    const std::string g = text::nfc(refs[s]);
    const auto ht = text::split_whitespace(h);
    const auto gt = text::split_whitespace(g);
    r.hyp_len += ht.size();
    r.ref_len += gt.size();
    for (std::size_t n = 1; n <= N; ++n) {
      const auto hc = count_ngrams(ht, n);
      const auto gc = count_ngrams(gt, n);
      for (const auto& [gram, c] : hc) {
        r.totals[n - 1] += c;
        if (auto it = gc.find(gram); it != gc.end()) r.matches[n - 1] += std::min(c, it->second);
      }
    }
  }

  r.precisions.assign(N, 0.0);
  double log_sum = 0.0;
  std::size_t available = 0;
  bool zero = false;
  for (std::size_t n = 0; n < N; ++n) {
    if (r.totals[n] == 0) continue;
    double m = static_cast<double>(r.matches[n]);
    double t = static_cast<double>(r.totals[n]);
    if (opt.smoothing == Smoothing::AddOne && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    r.precisions[n] = m / t;
    ++available;
    if (m == 0.0) {
      zero = true;
    } else {
      log_sum += std::log(r.precisions[n]);
    }
  }

  if (r.hyp_len == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hyp_len >= r.ref_len) {
    r.brevity_penalty = 1.0;
  } else {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_len) / static_cast<double>(r.hyp_len));
  }
  r.score = (available == 0 || zero) ? 0.0 : r.brevity_penalty * std::exp(log_sum / static_cast<double>(available));
  return r;
}

}  // namespace omt::eval
