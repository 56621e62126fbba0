#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "omt/gguf.hpp"

// SentencePiece-style subword tokenizer driven by GGUF tokenizer metadata.
namespace omt::tok {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Values are the on-disk token_type ids.
enum class TokenType : std::int32_t {
  Undefined = 0,
  Normal = 1,
  Unknown = 2,
  Control = 3,
  UserDefined = 4,
  Unused = 5,
  Byte = 6,
};

inline constexpr std::string_view kSpaceMarker = "\xE2\x96\x81";  // U+2581

struct Vocab {
  std::vector<std::string> pieces;
  std::vector<float> scores;
  std::vector<TokenType> types;
  TokenId bos = 1;
  TokenId eos = 2;
  TokenId unk = 0;
  std::optional<TokenId> pad;
  bool add_bos = true;
  bool add_eos = false;
  bool add_space_prefix = true;
  bool byte_fallback = false;

  std::unordered_map<std::string, TokenId> piece_to_id;
  std::array<TokenId, 256> byte_ids{};
  // Control and user-defined tokens, longest text first, for special parsing.
  std::vector<TokenId> specials;

  std::size_t size() const noexcept { return pieces.size(); }
  bool valid(TokenId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < pieces.size(); }
  std::optional<TokenId> find(std::string_view piece) const;
};

Vocab load_vocab(const gguf::GgufFile& file);

// Builds a vocab from explicit tables (used by tests and tools).
Vocab make_vocab(std::vector<std::string> pieces, std::vector<float> scores, std::vector<TokenType> types,
                 TokenId bos, TokenId eos, TokenId unk, bool add_space_prefix = true);

// Text is NFC-normalized first. With parse_special, control and user-defined
// token texts in the input map to their ids; otherwise they are plain text.
TokenSequence encode(const Vocab& vocab, std::string_view text, bool add_bos, bool parse_special = false);

// A piece of input for encode_segments: literal text, or template text in
// which special token texts are recognized.
struct Segment {
  std::string text;
  bool special = false;
};

// Encodes the concatenation of segments as one text, except that special
// token texts are only recognized inside special segments.
TokenSequence encode_segments(const Vocab& vocab, std::span<const Segment> segments, bool add_bos);

std::string decode(const Vocab& vocab, std::span<const TokenId> ids);

// Display form: the stored piece, with the space marker kept when
// show_space_marker is set and replaced by ' ' otherwise. Byte tokens render
// as their <0xXX> piece.
std::string token_to_piece(const Vocab& vocab, TokenId id, bool show_space_marker = true);

// Raw bytes this token contributes to decoded text.
std::string token_bytes(const Vocab& vocab, TokenId id);

// Incremental decoder for streaming. push() returns the text that became
// complete with this token: incomplete UTF-8 is held back, invalid bytes
// become U+FFFD. Concatenating every push() result equals decode(ids) of the
// same ids; decode likewise drops a trailing incomplete sequence.
class StreamDecoder {
 public:
  explicit StreamDecoder(const Vocab& vocab) : vocab_(&vocab) {}
  std::string push(TokenId id);

 private:
  const Vocab* vocab_;
  std::string pending_;
  bool at_start_ = true;
};

}  // namespace omt::tok
