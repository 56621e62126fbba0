#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "omt/model.hpp"
#include "omt/tokenizer.hpp"

// Source text in, clean translation out.
namespace omt::pipeline {

enum class Direction { ViToEn, EnToVi };

// "vi-en" / "en-vi"
std::string_view direction_code(Direction d) noexcept;
Direction parse_direction(std::string_view code);
std::string_view source_language(Direction d) noexcept;
std::string_view target_language(Direction d) noexcept;
Direction flipped(Direction d) noexcept;

// Instruction text only; the chat markup comes from the template family.
struct PromptWording {
  std::string system_vi_en;
  std::string system_en_vi;

  const std::string& system_for(Direction d) const noexcept { return d == Direction::ViToEn ? system_vi_en : system_en_vi; }
};

PromptWording default_wording();
// JSON: {"system": {"vi-en": "...", "en-vi": "..."}}. Missing entries keep defaults.
PromptWording load_wording(const std::filesystem::path& path);

enum class ChatFamily { Zephyr, ChatMl, Llama2 };

std::string_view family_name(ChatFamily f) noexcept;
// Recognizes the markup used by a jinja chat template. Unknown templates
// fall back to Zephyr, the format of the default model.
ChatFamily detect_family(std::string_view chat_template) noexcept;

struct PromptTemplate {
  ChatFamily family = ChatFamily::Zephyr;
  PromptWording wording;
  std::string eos_text = "</s>";
  std::string assistant_header;
  std::vector<std::string> stop_strings;
  std::vector<std::string> role_markers;
};

PromptTemplate make_template(ChatFamily family, PromptWording wording = default_wording(), std::string eos_text = "</s>");
// Uses tokenizer.chat_template and the eos piece when the file has them.
PromptTemplate template_for_file(const gguf::GgufFile& file, const tok::Vocab& vocab,
                                 PromptWording wording = default_wording());

// Markup segments are special (their token texts map to control ids), the
// user's text is literal. Throws EmptyInput for blank text.
std::vector<tok::Segment> render_segments(const PromptTemplate& tmpl, Direction direction, std::string_view text);
std::string build_prompt(const PromptTemplate& tmpl, Direction direction, std::string_view text);

std::string postprocess(std::string_view raw, const PromptTemplate& tmpl);

struct Audio {
  std::vector<float> samples;
  int sample_rate = 16000;
};

class SpeechAdapter {
 public:
  virtual ~SpeechAdapter() = default;
  virtual bool has_speech_to_text() const = 0;
  virtual bool has_text_to_speech() const = 0;
  // Attests that the adapter does all its work on this machine.
  virtual bool is_local() const = 0;
  virtual std::string speech_to_text(const Audio& audio, std::string_view language) = 0;
  virtual Audio text_to_speech(std::string_view text, std::string_view language) = 0;
};

struct TranslationTurn {
  Direction direction = Direction::ViToEn;
  std::string source_text;
  std::string output_text;
  std::size_t prompt_tokens = 0;
  std::size_t generated_tokens = 0;
  double total_ms = 0.0;
  double prompt_ms = 0.0;
  double generate_ms = 0.0;
  double ms_per_generated_token = 0.0;
  bool truncated = false;
  bool cancelled = false;
  std::optional<Audio> speech;  // set when a TTS adapter is registered
};

struct StreamEvent {
  tok::TokenId id = 0;
  std::string text;  // newly completed UTF-8 text, possibly empty
  std::size_t index = 0;
};

// Returning false cancels the turn after this token.
using StreamSink = std::function<bool(const StreamEvent&)>;

struct SessionOptions {
  Direction direction = Direction::ViToEn;
  llm::GenParams gen;
  std::size_t context_len = 0;  // 0: the model's context length
  std::optional<PromptTemplate> prompt;  // default: template_for_file
};

// One conversation over a shared model. Concurrent translate() calls are
// served one at a time in arrival order.
class Session {
 public:
  Session(std::shared_ptr<const llm::Model> model, std::shared_ptr<const tok::Vocab> vocab, SessionOptions options = {});

  TranslationTurn translate(std::string_view text, const StreamSink& sink = {});
  // One turn in the given direction; the session's direction is unchanged.
  TranslationTurn translate(Direction direction, std::string_view text, const StreamSink& sink = {});
  TranslationTurn translate_speech(const Audio& audio, const StreamSink& sink = {});

  void set_direction(Direction d);
  Direction direction() const;
  void register_speech_adapter(std::shared_ptr<SpeechAdapter> adapter);

  const PromptTemplate& prompt_template() const noexcept { return tmpl_; }
  const llm::Model& model() const noexcept { return *model_; }
  const tok::Vocab& vocab() const noexcept { return *vocab_; }
  const std::vector<tok::TokenId>& stop_ids() const noexcept { return stop_ids_; }
  std::size_t context_len() const noexcept { return cache_.capacity(); }

  // Prompt tokens for text in the current direction (no generation).
  tok::TokenSequence encode_prompt(std::string_view text) const;

 private:
  class Turnstile {
   public:
    void enter();
    void leave();

   private:
    std::mutex m_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
  };

  TranslationTurn run_turn(std::optional<Direction> direction, std::string_view text, const StreamSink& sink);

  std::shared_ptr<const llm::Model> model_;
  std::shared_ptr<const tok::Vocab> vocab_;
  PromptTemplate tmpl_;
  llm::GenParams gen_;
  std::vector<tok::TokenId> stop_ids_;
  mutable std::mutex state_;
  Direction direction_;
  std::shared_ptr<SpeechAdapter> adapter_;
  Turnstile turnstile_;
  llm::KvCache cache_;
};

}  // namespace omt::pipeline
