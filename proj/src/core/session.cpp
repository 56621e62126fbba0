#include <algorithm>
#include <chrono>

#include "omt/error.hpp"
#include "omt/pipeline.hpp"
#include "omt/text.hpp"

namespace omt::pipeline {
namespace {

std::size_t cache_size(const llm::Model& model, std::size_t requested) {
  const std::size_t ctx = model.config.context_len;
  return requested ? std::min(requested, ctx) : ctx;
}

}  // namespace

void Session::Turnstile::enter() {
  std::unique_lock lock(m_);
  const std::uint64_t ticket = next_++;
  cv_.wait(lock, [&] { return serving_ == ticket; });
}

void Session::Turnstile::leave() {
  {
    std::lock_guard lock(m_);
    ++serving_;
  }
  cv_.notify_all();
}

Session::Session(std::shared_ptr<const llm::Model> model, std::shared_ptr<const tok::Vocab> vocab,
                 SessionOptions options)
    : model_(std::move(model)),
      vocab_(std::move(vocab)),
      gen_(std::move(options.gen)),
      direction_(options.direction),
      cache_(model_->config, cache_size(*model_, options.context_len)) {
  if (!vocab_) fail(Errc::InvalidArgument, "session needs a vocabulary");
  if (vocab_->size() != model_->config.vocab_size) {
    fail(Errc::VocabSizeMismatch, "tokenizer has " + std::to_string(vocab_->size()) + " tokens, model expects " +
                                      std::to_string(model_->config.vocab_size));
  }
  tmpl_ = options.prompt ? std::move(*options.prompt) : template_for_file(model_->file(), *vocab_);

  stop_ids_ = gen_.stop_token_ids;
  stop_ids_.push_back(vocab_->eos);
  for (const auto& s : tmpl_.stop_strings) {
    const auto id = vocab_->find(s);
    if (!id) continue;
    const auto type = vocab_->types[static_cast<std::size_t>(*id)];
    if (type == tok::TokenType::Control || type == tok::TokenType::UserDefined) stop_ids_.push_back(*id);
  }
  std::sort(stop_ids_.begin(), stop_ids_.end());
  stop_ids_.erase(std::unique(stop_ids_.begin(), stop_ids_.end()), stop_ids_.end());
  gen_.stop_token_ids = stop_ids_;
}

void Session::set_direction(Direction d) {
  std::lock_guard lock(state_);
  direction_ = d;
}

Direction Session::direction() const {
  std::lock_guard lock(state_);
  return direction_;
}

void Session::register_speech_adapter(std::shared_ptr<SpeechAdapter> adapter) {
  if (adapter && !adapter->is_local()) fail(Errc::InvalidArgument, "speech adapters must run locally");
  std::lock_guard lock(state_);
  adapter_ = std::move(adapter);
}

tok::TokenSequence Session::encode_prompt(std::string_view text) const {
  const std::string norm = text::nfc(text);
  const auto segs = render_segments(tmpl_, direction(), text::trim(norm));
  return tok::encode_segments(*vocab_, segs, vocab_->add_bos);
}

TranslationTurn Session::translate(std::string_view text, const StreamSink& sink) {
  turnstile_.enter();
  struct Leave {
    Turnstile& t;
    ~Leave() { t.leave(); }
  } leave{turnstile_};
  return run_turn(std::nullopt, text, sink);
}

TranslationTurn Session::translate(Direction direction, std::string_view text, const StreamSink& sink) {
  turnstile_.enter();
  struct Leave {
    Turnstile& t;
    ~Leave() { t.leave(); }
  } leave{turnstile_};
  return run_turn(direction, text, sink);
}

TranslationTurn Session::translate_speech(const Audio& audio, const StreamSink& sink) {
  std::shared_ptr<SpeechAdapter> adapter;
  Direction dir;
  {
    std::lock_guard lock(state_);
    adapter = adapter_;
    dir = direction_;
  }
  if (!adapter || !adapter->has_speech_to_text()) fail(Errc::InvalidArgument, "no speech-to-text adapter registered");
  return translate(adapter->speech_to_text(audio, source_language(dir)), sink);
}

TranslationTurn Session::run_turn(std::optional<Direction> direction, std::string_view text, const StreamSink& sink) {
  const auto start = std::chrono::steady_clock::now();
  Direction dir;
  std::shared_ptr<SpeechAdapter> adapter;
  {
    std::lock_guard lock(state_);
    dir = direction.value_or(direction_);
    adapter = adapter_;
  }

  TranslationTurn turn;
  turn.direction = dir;
  const std::string norm = text::nfc(text);
  turn.source_text = std::string(text::trim(norm));
  if (turn.source_text.empty()) fail(Errc::EmptyInput, "source text is empty");

  const auto segs = render_segments(tmpl_, dir, turn.source_text);
  const auto prompt = tok::encode_segments(*vocab_, segs, vocab_->add_bos);
  if (prompt.size() >= cache_.capacity()) {
    fail(Errc::ContextOverflow, "prompt of " + std::to_string(prompt.size()) +
                                    " tokens does not fit a context of " + std::to_string(cache_.capacity()));
  }
  turn.prompt_tokens = prompt.size();

  tok::StreamDecoder decoder(*vocab_);
  std::size_t index = 0;
  const auto result = llm::generate(*model_, prompt, gen_, cache_, [&](tok::TokenId id) {
    StreamEvent ev{id, decoder.push(id), index++};
    return sink ? sink(ev) : true;
  });

  turn.generated_tokens = result.tokens.size();
  turn.truncated = result.truncated;
  turn.cancelled = result.cancelled;
  turn.output_text = postprocess(tok::decode(*vocab_, result.tokens), tmpl_);
  if (adapter && adapter->has_text_to_speech() && !turn.cancelled) {
    turn.speech = adapter->text_to_speech(turn.output_text, target_language(dir));
  }
  turn.prompt_ms = result.prompt_ms;
  turn.generate_ms = result.generate_ms;
  turn.total_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  turn.ms_per_generated_token =
      result.generate_ms / static_cast<double>(std::max<std::size_t>(1, turn.generated_tokens));
  return turn;
}

}  // namespace omt::pipeline
