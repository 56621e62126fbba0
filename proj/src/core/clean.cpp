#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "omt/error.hpp"
#include "omt/eval.hpp"
#include "omt/text.hpp"

namespace omt::eval {

TsvCorpus parse_tsv(std::istream& in, const std::string& origin) {
  TsvCorpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || line.find('\t', tab + 1) != std::string::npos || !text::is_valid_utf8(line)) {
      ++corpus.malformed;
      continue;
    }
    corpus.pairs.push_back({line.substr(0, tab), line.substr(tab + 1), origin});
  }
  return corpus;
}

TsvCorpus read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  return parse_tsv(in, path.filename().string());
}

void write_tsv(std::ostream& out, std::span<const ParallelPair> pairs) {
  for (const auto& p : pairs) out << p.source << '\t' << p.target << '\n';
}

CleaningResult clean_corpus(std::span<const ParallelPair> pairs, const CleaningRules& rules) {
  CleaningResult res;
  auto& r = res.report;
  r.input_count = pairs.size();
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& p : pairs) {
    if (!text::is_valid_utf8(p.source) || !text::is_valid_utf8(p.target) ||
        p.source.find_first_of("\t\n") != std::string::npos || p.target.find_first_of("\t\n") != std::string::npos) {
      ++r.removed.malformed;
      continue;
    }
    std::string src = text::nfc(p.source);
    std::string tgt = text::nfc(p.target);
    if (src != p.source || tgt != p.target) ++r.removed.encoding_fixes;
    src = std::string(text::trim(src));
    tgt = std::string(text::trim(tgt));
    if (src.empty() || tgt.empty()) {
      ++r.removed.empties;
      continue;
    }
    const double ratio = static_cast<double>(text::split_whitespace(src).size()) /
                         static_cast<double>(text::split_whitespace(tgt).size());
    if (ratio < rules.min_ratio || ratio > rules.max_ratio) {
      ++r.removed.ratio_outliers;
      continue;
    }
    if (!seen.emplace(src, tgt).second) {
      ++r.removed.duplicates;
      continue;
    }
    res.pairs.push_back({std::move(src), std::move(tgt), p.origin});
  }
  r.kept_count = res.pairs.size();
  return res;
}

CleaningResult clean_corpus(const TsvCorpus& corpus, const CleaningRules& rules) {
  auto res = clean_corpus(corpus.pairs, rules);
  res.report.input_count += corpus.malformed;
  res.report.removed.malformed += corpus.malformed;
  return res;
}

}  // namespace omt::eval
