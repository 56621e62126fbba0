#include "omt/tokenizer.hpp"

#include <algorithm>
#include <cstdio>
#include <queue>

#include "omt/error.hpp"
#include "omt/text.hpp"

namespace omt::tok {
namespace {

constexpr std::string_view kReplacement = "\xEF\xBF\xBD";

std::optional<int> parse_byte_piece(std::string_view p) {
  // "<0xAB>"
  if (p.size() != 6 || p.substr(0, 3) != "<0x" || p[5] != '>') return std::nullopt;
  int v = 0;
  for (int i = 3; i < 5; ++i) {
    const char c = p[static_cast<std::size_t>(i)];
    int d;
    if (c >= '0' && c <= '9') d = c - '0';
    else if (c >= 'A' && c <= 'F') d = c - 'A' + 10;
    else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
    else return std::nullopt;
    v = v * 16 + d;
  }
  return v;
}

void build_indexes(Vocab& v) {
  v.piece_to_id.clear();
  v.piece_to_id.reserve(v.pieces.size());
  v.specials.clear();
  int bytes_found = 0;
  v.byte_ids.fill(-1);
  for (std::size_t i = 0; i < v.pieces.size(); ++i) {
    const auto id = static_cast<TokenId>(i);
    // first id wins for duplicated pieces
    v.piece_to_id.emplace(v.pieces[i], id);
    const TokenType t = v.types[i];
    if (t == TokenType::Byte) {
      const auto b = parse_byte_piece(v.pieces[i]);
      if (!b) fail(Errc::MissingTokenizerMetadata, "byte token " + std::to_string(i) + " has piece " + v.pieces[i]);
      if (v.byte_ids[static_cast<std::size_t>(*b)] < 0) ++bytes_found;
      v.byte_ids[static_cast<std::size_t>(*b)] = id;
    }
    if ((t == TokenType::Control || t == TokenType::UserDefined || t == TokenType::Unknown) && !v.pieces[i].empty()) {
      v.specials.push_back(id);
    }
  }
  v.byte_fallback = bytes_found > 0;
  if (v.byte_fallback && bytes_found != 256) {
    fail(Errc::MissingTokenizerMetadata, "byte fallback needs 256 byte tokens, found " + std::to_string(bytes_found));
  }
  std::stable_sort(v.specials.begin(), v.specials.end(), [&](TokenId a, TokenId b) {
    return v.pieces[static_cast<std::size_t>(a)].size() > v.pieces[static_cast<std::size_t>(b)].size();
  });
  for (TokenId id : {v.bos, v.eos, v.unk}) {
    if (!v.valid(id)) fail(Errc::InvalidTokenId, "special token id " + std::to_string(id) + " out of range");
  }
  if (v.pad && !v.valid(*v.pad)) fail(Errc::InvalidTokenId, "padding id out of range");
}

// Score-greedy merging of adjacent symbols, SentencePiece BPE style.
class Merger {
 public:
  Merger(const Vocab& vocab, std::string_view text) : vocab_(vocab), text_(text) {}

  void run(TokenSequence& out) {
    if (text_.empty()) return;
    for (std::size_t i = 0; i < text_.size();) {
      const std::size_t n = std::min(text::utf8_seq_len(static_cast<unsigned char>(text_[i])), text_.size() - i);
      const int idx = static_cast<int>(syms_.size());
      syms_.push_back({idx - 1, idx + 1, i, n});
      i += n;
    }
    syms_.back().next = -1;
    for (int i = 1; i < static_cast<int>(syms_.size()); ++i) try_add(i - 1, i);

    while (!queue_.empty()) {
      const Bigram b = queue_.top();
      queue_.pop();
      Sym& left = syms_[static_cast<std::size_t>(b.left)];
      Sym& right = syms_[static_cast<std::size_t>(b.right)];
      // stale entry: one side was merged away since it was queued
      if (left.len == 0 || right.len == 0 || left.len + right.len != b.size) continue;
      left.len += right.len;
      right.len = 0;
      left.next = right.next;
      if (right.next >= 0) syms_[static_cast<std::size_t>(right.next)].prev = b.left;
      try_add(left.prev, b.left);
      try_add(b.left, left.next);
    }

    for (int i = 0; i != -1; i = syms_[static_cast<std::size_t>(i)].next) {
      const Sym& s = syms_[static_cast<std::size_t>(i)];
      emit(text_.substr(s.start, s.len), out);
    }
  }

 private:
  struct Sym {
    int prev;
    int next;
    std::size_t start;
    std::size_t len;
  };
  struct Bigram {
    int left;
    int right;
    float score;
    std::size_t size;
    TokenId id;
  };
  // Priority: higher score, then the longer piece, then the lower id, then
  // the leftmost position.
  struct Lower {
    bool operator()(const Bigram& a, const Bigram& b) const {
      if (a.score != b.score) return a.score < b.score;
      if (a.size != b.size) return a.size < b.size;
      if (a.id != b.id) return a.id > b.id;
      return a.left > b.left;
    }
  };

  void try_add(int left, int right) {
    if (left < 0 || right < 0) return;
    const Sym& l = syms_[static_cast<std::size_t>(left)];
    const Sym& r = syms_[static_cast<std::size_t>(right)];
    const std::string piece(text_.substr(l.start, l.len + r.len));
    const auto it = vocab_.piece_to_id.find(piece);
    if (it == vocab_.piece_to_id.end()) return;
    queue_.push({left, right, vocab_.scores[static_cast<std::size_t>(it->second)], piece.size(), it->second});
  }

  void emit(std::string_view piece, TokenSequence& out) const {
    const auto it = vocab_.piece_to_id.find(std::string(piece));
    if (it != vocab_.piece_to_id.end()) {
      out.push_back(it->second);
      return;
    }
    for (char c : piece) {
      const TokenId b = vocab_.byte_fallback ? vocab_.byte_ids[static_cast<unsigned char>(c)] : -1;
      out.push_back(b >= 0 ? b : vocab_.unk);
      if (!vocab_.byte_fallback) break;  // one unknown per character
    }
  }

  const Vocab& vocab_;
  std::string_view text_;
  std::vector<Sym> syms_;
  std::priority_queue<Bigram, std::vector<Bigram>, Lower> queue_;
};

struct Fragment {
  std::string raw;
  TokenId token = -1;  // >= 0 for a recognized special token
};

void split_specials(const Vocab& vocab, std::vector<Fragment>& frags) {
  for (TokenId sid : vocab.specials) {
    const std::string& sp = vocab.pieces[static_cast<std::size_t>(sid)];
    std::vector<Fragment> next;
    for (auto& f : frags) {
      if (f.token >= 0) {
        next.push_back(std::move(f));
        continue;
      }
      std::size_t pos = 0;
      for (;;) {
        const std::size_t hit = f.raw.find(sp, pos);
        if (hit == std::string::npos) break;
        if (hit > pos) next.push_back({f.raw.substr(pos, hit - pos), -1});
        next.push_back({{}, sid});
        pos = hit + sp.size();
      }
      if (pos < f.raw.size()) next.push_back({f.raw.substr(pos), -1});
    }
    frags = std::move(next);
  }
}

TokenSequence encode_fragments(const Vocab& vocab, const std::vector<Fragment>& frags, bool add_bos) {
  TokenSequence out;
  if (add_bos) out.push_back(vocab.bos);
  bool prev_special = true;  // the first raw fragment gets the space prefix
  for (const auto& f : frags) {
    if (f.token >= 0) {
      out.push_back(f.token);
      prev_special = true;
      continue;
    }
    std::string t;
    if (vocab.add_space_prefix && prev_special) t = " ";
    t += f.raw;
    text::replace_all(t, " ", kSpaceMarker);
    Merger(vocab, t).run(out);
    prev_special = false;
  }
  return out;
}

// Length of the longest prefix of `s` that could still grow into one valid
// UTF-8 sequence, or 0 when s[0] cannot start one.
std::size_t valid_prefix_len(std::string_view s) {
  const auto c0 = static_cast<unsigned char>(s[0]);
  std::size_t need;
  unsigned char lo = 0x80, hi = 0xBF;
  if (c0 >= 0xC2 && c0 <= 0xDF) need = 2;
  else if (c0 >= 0xE0 && c0 <= 0xEF) {
    need = 3;
    if (c0 == 0xE0) lo = 0xA0;
    if (c0 == 0xED) hi = 0x9F;
  } else if (c0 >= 0xF0 && c0 <= 0xF4) {
    need = 4;
    if (c0 == 0xF0) lo = 0x90;
    if (c0 == 0xF4) hi = 0x8F;
  } else {
    return 0;
  }
  std::size_t k = 1;
  for (; k < need && k < s.size(); ++k) {
    const auto c = static_cast<unsigned char>(s[k]);
    const unsigned char l = k == 1 ? lo : 0x80;
    const unsigned char h = k == 1 ? hi : 0xBF;
    if (c < l || c > h) return 0;
  }
  return k;
}

}  // namespace

std::optional<TokenId> Vocab::find(std::string_view piece) const {
  const auto it = piece_to_id.find(std::string(piece));
  if (it == piece_to_id.end()) return std::nullopt;
  return it->second;
}

Vocab make_vocab(std::vector<std::string> pieces, std::vector<float> scores, std::vector<TokenType> types,
                 TokenId bos, TokenId eos, TokenId unk, bool add_space_prefix) {
  if (scores.size() != pieces.size() || types.size() != pieces.size()) {
    fail(Errc::VocabSizeMismatch, "pieces, scores and types differ in length");
  }
  Vocab v;
  v.pieces = std::move(pieces);
  v.scores = std::move(scores);
  v.types = std::move(types);
  v.bos = bos;
  v.eos = eos;
  v.unk = unk;
  v.add_space_prefix = add_space_prefix;
  build_indexes(v);
  return v;
}

Vocab load_vocab(const gguf::GgufFile& file) {
  using gguf::MetaType;
  const auto* model = file.find("tokenizer.ggml.model");
  if (!model) fail(Errc::MissingTokenizerMetadata, "tokenizer.ggml.model is missing");
  if (model->type() != MetaType::String || model->as_string() != "llama") {
    fail(Errc::MissingTokenizerMetadata, "tokenizer model is not a llama (SentencePiece) vocabulary");
  }
  auto get_array = [&](const char* key, MetaType elem) -> const gguf::MetaArray& {
    const auto* v = file.find(key);
    if (!v) fail(Errc::MissingTokenizerMetadata, std::string(key) + " is missing");
    if (v->type() != MetaType::Array || v->as_array().elem_type != elem) {
      fail(Errc::MissingTokenizerMetadata, std::string(key) + " has the wrong type");
    }
    return v->as_array();
  };
  const auto& tokens = get_array("tokenizer.ggml.tokens", MetaType::String);
  const auto& scores = get_array("tokenizer.ggml.scores", MetaType::F32);
  const auto& types = get_array("tokenizer.ggml.token_type", MetaType::I32);
  const std::size_t n = tokens.items.size();
  if (scores.items.size() != n || types.items.size() != n) {
    fail(Errc::VocabSizeMismatch, std::to_string(n) + " tokens but " + std::to_string(scores.items.size()) +
                                      " scores and " + std::to_string(types.items.size()) + " types");
  }
  if (const auto* arch = file.find("general.architecture"); arch && arch->type() == MetaType::String) {
    if (const auto* declared = file.find(arch->as_string() + ".vocab_size")) {
      if (declared->as_uint() != n) {
        fail(Errc::VocabSizeMismatch, "metadata declares " + std::to_string(declared->as_uint()) + " tokens, list has " +
                                          std::to_string(n));
      }
    }
  }
  Vocab v;
  v.pieces.reserve(n);
  v.scores.reserve(n);
  v.types.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    v.pieces.push_back(tokens.items[i].as_string());
    v.scores.push_back(std::get<float>(scores.items[i].value));
    v.types.push_back(static_cast<TokenType>(std::get<std::int32_t>(types.items[i].value)));
  }
  auto id_key = [&](const char* key, TokenId fallback) -> TokenId {
    const auto* val = file.find(key);
    return val ? static_cast<TokenId>(val->as_int()) : fallback;
  };
  auto bool_key = [&](const char* key, bool fallback) {
    const auto* val = file.find(key);
    return val ? val->as_bool() : fallback;
  };
  v.bos = id_key("tokenizer.ggml.bos_token_id", 1);
  v.eos = id_key("tokenizer.ggml.eos_token_id", 2);
  v.unk = id_key("tokenizer.ggml.unknown_token_id", 0);
  if (file.find("tokenizer.ggml.padding_token_id")) v.pad = id_key("tokenizer.ggml.padding_token_id", -1);
  v.add_bos = bool_key("tokenizer.ggml.add_bos_token", true);
  v.add_eos = bool_key("tokenizer.ggml.add_eos_token", false);
  v.add_space_prefix = bool_key("tokenizer.ggml.add_space_prefix", true);
  build_indexes(v);
  return v;
}

TokenSequence encode(const Vocab& vocab, std::string_view input, bool add_bos, bool parse_special) {
  const Segment seg{std::string(input), parse_special};
  return encode_segments(vocab, std::span<const Segment>(&seg, 1), add_bos);
}

TokenSequence encode_segments(const Vocab& vocab, std::span<const Segment> segments, bool add_bos) {
  std::vector<Fragment> frags;
  for (const auto& seg : segments) {
    const std::string norm = text::nfc(seg.text);
    std::vector<Fragment> part{{norm, -1}};
    if (seg.special) split_specials(vocab, part);
    for (auto& f : part) {
      if (f.token < 0 && f.raw.empty()) continue;
      // adjacent raw text from different segments tokenizes as one run
      if (f.token < 0 && !frags.empty() && frags.back().token < 0) {
        frags.back().raw += f.raw;
      } else {
        frags.push_back(std::move(f));
      }
    }
  }
  return encode_fragments(vocab, frags, add_bos);
}

std::string token_bytes(const Vocab& vocab, TokenId id) {
  if (!vocab.valid(id)) fail(Errc::InvalidTokenId, "token id " + std::to_string(id));
  const auto i = static_cast<std::size_t>(id);
  switch (vocab.types[i]) {
    case TokenType::Control:
    case TokenType::Unused:
      return {};
    case TokenType::Unknown:
      return std::string(kReplacement);
    case TokenType::Byte: {
      const auto b = parse_byte_piece(vocab.pieces[i]);
      return std::string(1, static_cast<char>(*b));
    }
    case TokenType::UserDefined:
      return vocab.pieces[i];
    default: {
      std::string s = vocab.pieces[i];
      text::replace_all(s, kSpaceMarker, " ");
      return s;
    }
  }
}

std::string token_to_piece(const Vocab& vocab, TokenId id, bool show_space_marker) {
  if (!vocab.valid(id)) fail(Errc::InvalidTokenId, "token id " + std::to_string(id));
  std::string s = vocab.pieces[static_cast<std::size_t>(id)];
  if (!show_space_marker) text::replace_all(s, kSpaceMarker, " ");
  return s;
}

std::string StreamDecoder::push(TokenId id) {
  std::string bytes = token_bytes(*vocab_, id);
  if (at_start_ && !bytes.empty()) {
    if (vocab_->add_space_prefix && bytes[0] == ' ') bytes.erase(0, 1);
    at_start_ = false;
  }
  pending_ += bytes;
  std::string out;
  std::size_t i = 0;
  while (i < pending_.size()) {
    const auto c = static_cast<unsigned char>(pending_[i]);
    if (c < 0x80) {
      out += static_cast<char>(c);
      ++i;
      continue;
    }
    const std::string_view rest(pending_.data() + i, pending_.size() - i);
    const std::size_t k = valid_prefix_len(rest);
    if (k == 0) {
      out += kReplacement;
      ++i;
      continue;
    }
    const std::size_t need = text::utf8_seq_len(c);
    if (k < need) {
      if (i + k == pending_.size()) break;  // incomplete: wait for more bytes
      out += kReplacement;  // broken sequence: replace what was read
      i += k;
      continue;
    }
    out.append(rest.substr(0, need));
    i += need;
  }
  pending_.erase(0, i);
  return out;
}

std::string decode(const Vocab& vocab, std::span<const TokenId> ids) {
  StreamDecoder d(vocab);
  std::string out;
  for (TokenId id : ids) out += d.push(id);
  return out;
}

}  // namespace omt::tok
