#include <doctest.h>

#include <fstream>

#include <random>
#include <thread>

#include "fixtures.hpp"
#include "omt/error.hpp"
#include "omt/pipeline.hpp"
#include "omt/text.hpp"

using namespace omt;
using namespace omt::pipeline;

namespace {

fx::Loaded small_model(std::uint32_t context = 512) {
  fx::TinyModel m;
  m.context = context;
  m.init_weights();
  return fx::load(m);
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return Errc::IoError;
}

class MockSpeech : public SpeechAdapter {
 public:
  bool local = true;
  std::vector<std::string> spoken;
  std::vector<std::string> languages;

  bool has_speech_to_text() const override { return true; }
  bool has_text_to_speech() const override { return true; }
  bool is_local() const override { return local; }
  std::string speech_to_text(const Audio& audio, std::string_view) override {
    return audio.samples.empty() ? "" : "abcd";
  }
  Audio text_to_speech(std::string_view text, std::string_view language) override {
    spoken.emplace_back(text);
    languages.emplace_back(language);
    return Audio{std::vector<float>(text.size(), 0.25f), 22050};
  }
};

}  // namespace

TEST_CASE("directions") {
  CHECK(direction_code(Direction::ViToEn) == "vi-en");
  CHECK(parse_direction("en-vi") == Direction::EnToVi);
  CHECK(code_of([] { parse_direction("fr-en"); }) == Errc::InvalidArgument);
  CHECK(flipped(Direction::ViToEn) == Direction::EnToVi);
  CHECK(source_language(Direction::EnToVi) == "English");
}

TEST_CASE("build_prompt structure") {
  const auto t = make_template(ChatFamily::Zephyr);
  const auto p = build_prompt(t, Direction::EnToVi, "Hello");
  CHECK(p.find(t.wording.system_en_vi) != std::string::npos);
  CHECK(p.find("English text into Vietnamese") != std::string::npos);
  CHECK(p.find("<|user|>\nHello</s>") != std::string::npos);
  CHECK(text::starts_with(std::string_view(p).substr(p.size() - t.assistant_header.size()), t.assistant_header));
  CHECK(code_of([&] { build_prompt(t, Direction::EnToVi, " \t\n "); }) == Errc::EmptyInput);

  for (ChatFamily f : {ChatFamily::ChatMl, ChatFamily::Llama2}) {
    const auto tf = make_template(f);
    const auto pf = build_prompt(tf, Direction::ViToEn, "Xin chào");
    CHECK(pf.find("Xin chào") != std::string::npos);
    CHECK(pf.substr(pf.size() - tf.assistant_header.size()) == tf.assistant_header);
  }
}

TEST_CASE("family detection") {
  CHECK(detect_family(fx::read_file(fx::data_path("chat_template.jinja"))) == ChatFamily::Zephyr);
  CHECK(detect_family("{{ '<|im_start|>' + message['role'] }}") == ChatFamily::ChatMl);
  CHECK(detect_family("{{ bos_token + '[INST] ' + content }}") == ChatFamily::Llama2);
}

TEST_CASE("prompt matches the model's chat template rendering") {
  fx::TinyModel m;
  m.llama_vocab = true;
  m.layers = 1;
  m.context = 256;
  m.chat_template = fx::read_file(fx::data_path("chat_template.jinja"));
  m.init_weights();
  const auto l = fx::load(m);
  const auto t = template_for_file(*l.file, *l.vocab);
  CHECK(t.family == ChatFamily::Zephyr);
  CHECK(build_prompt(t, Direction::EnToVi, "Hello") == fx::read_file(fx::data_path("chat_prompt_en-vi.txt")));
  CHECK(build_prompt(t, Direction::ViToEn, "Xin chào") == fx::read_file(fx::data_path("chat_prompt_vi-en.txt")));

  SessionOptions o;
  o.direction = Direction::ViToEn;
  Session s(l.model, l.vocab, o);
  const auto want = tok::encode(*l.vocab, fx::read_file(fx::data_path("chat_prompt_vi-en.txt")), true, true);
  CHECK(s.encode_prompt("Xin chào") == want);
  CHECK(std::count(want.begin(), want.end(), l.vocab->eos) == 2);
}

TEST_CASE("wording file") {
  const auto w = load_wording(std::filesystem::path(OMT_TEST_DATA) / ".." / ".." / "config" / "prompts.json");
  const auto d = default_wording();
  CHECK(w.system_vi_en == d.system_vi_en);
  CHECK(w.system_en_vi == d.system_en_vi);
  const auto p = fx::temp_path("wording.json");
  {
    std::ofstream out(p);
    out << R"({"system": {"en-vi": "Dịch sang tiếng Việt."}})";
  }
  const auto c = load_wording(p);
  CHECK(c.system_en_vi == "Dịch sang tiếng Việt.");
  CHECK(c.system_vi_en == d.system_vi_en);
  {
    std::ofstream out(p);
    out << "{not json";
  }
  CHECK(code_of([&] { load_wording(p); }) == Errc::InvalidArgument);
  std::filesystem::remove(p);
}

TEST_CASE("postprocess rules") {
  const auto t = make_template(ChatFamily::Zephyr);
  CHECK(postprocess("Xin chào</s>", t) == "Xin chào");
  CHECK(postprocess("  hello \n", t) == "hello");
  CHECK(postprocess("<|assistant|>\nGood morning", t) == "Good morning");
  CHECK(postprocess("<|assistant|> <|assistant|>\n Good morning <|user|> more", t) == "Good morning");
  CHECK(postprocess("Hi\n\n  there", t) == "Hi there");
  CHECK(postprocess("", t).empty());
  const auto c = make_template(ChatFamily::ChatMl);
  CHECK(postprocess("<|im_start|>assistant\nXin chào<|im_end|>\n", c) == "Xin chào");
}

TEST_CASE("postprocess on adversarial outputs") {
  const auto t = make_template(ChatFamily::Zephyr);
  const std::vector<std::string> parts = {"<|assistant|>", "<|assistant|>\n", "<|user|>", "<|system|>", "</s>",
                                          "<|",           "|>",              "</",      "s>",         " ",
                                          "\n",           "\t",              "Xin",     "chào",       "Hello",
                                          "😀",           "<",               "assistant", "ạ",        "..."};
  std::mt19937_64 rng(77);
  for (int i = 0; i < 500; ++i) {
    std::string raw;
    const int n = static_cast<int>(rng() % 12);
    for (int k = 0; k < n; ++k) raw += parts[rng() % parts.size()];
    const auto out = postprocess(raw, t);
    INFO("raw: ", raw);
    CHECK(out == text::trim(out));
    CHECK(text::is_valid_utf8(out));
    for (const auto& s : t.stop_strings) CHECK(out.find(s) == std::string::npos);
    for (const auto& m : t.role_markers) CHECK(out.find(m) == std::string::npos);
    CHECK(out.find("  ") == std::string::npos);
    CHECK(postprocess(out, t) == out);
  }
}

TEST_CASE("session determinism and streaming") {
  const auto l = small_model();
  SessionOptions o;
  o.gen.max_new_tokens = 8;
  Session s(l.model, l.vocab, o);
  std::string streamed;
  std::vector<tok::TokenId> ids;
  const auto a = s.translate("abcd", [&](const StreamEvent& ev) {
    CHECK(ev.index == ids.size());
    ids.push_back(ev.id);
    streamed += ev.text;
    return true;
  });
  const auto b = s.translate("abcd");
  CHECK(a.output_text == b.output_text);
  CHECK(a.generated_tokens == b.generated_tokens);
  CHECK(a.generated_tokens == ids.size());
  CHECK(streamed == tok::decode(*l.vocab, ids));
  CHECK(postprocess(streamed, s.prompt_template()) == a.output_text);
  CHECK(a.prompt_tokens == s.encode_prompt("abcd").size());
  CHECK(a.direction == Direction::ViToEn);
  CHECK(a.source_text == "abcd");
  CHECK(a.total_ms >= a.generate_ms);
}

TEST_CASE("context overflow emits nothing") {
  const auto l = small_model(64);
  Session s(l.model, l.vocab);
  int events = 0;
  const std::string long_text(400, 'a');
  CHECK(code_of([&] {
          s.translate(long_text, [&](const StreamEvent&) {
            ++events;
            return true;
          });
        }) == Errc::ContextOverflow);
  CHECK(events == 0);
  CHECK(code_of([&] { s.translate("   "); }) == Errc::EmptyInput);
}

TEST_CASE("direction toggle") {
  const auto l = small_model();
  Session s(l.model, l.vocab);
  CHECK(s.direction() == Direction::ViToEn);
  const auto before = s.encode_prompt("ab");
  s.set_direction(flipped(s.direction()));
  CHECK(s.direction() == Direction::EnToVi);
  const auto after = s.encode_prompt("ab");
  CHECK(before != after);
  const auto t = s.prompt_template();
  CHECK(after == tok::encode_segments(*l.vocab, render_segments(t, Direction::EnToVi, "ab"), true));
  const auto turn = s.translate(Direction::ViToEn, "ab");
  CHECK(turn.direction == Direction::ViToEn);
  CHECK(s.direction() == Direction::EnToVi);
}

TEST_CASE("speech adapter wiring") {
  const auto l = small_model();
  SessionOptions o;
  o.gen.max_new_tokens = 5;
  Session s(l.model, l.vocab, o);
  const auto plain = s.translate("abcd");
  CHECK_FALSE(plain.speech.has_value());

  auto mock = std::make_shared<MockSpeech>();
  s.register_speech_adapter(mock);
  const auto turn = s.translate("abcd");
  REQUIRE(mock->spoken.size() == 1);
  CHECK(mock->spoken[0] == turn.output_text);
  CHECK(mock->languages[0] == "English");
  REQUIRE(turn.speech.has_value());
  CHECK(turn.speech->sample_rate == 22050);

  const auto heard = s.translate_speech(Audio{{0.1f, 0.2f}, 16000});
  CHECK(heard.source_text == "abcd");
  CHECK(heard.output_text == turn.output_text);

  auto remote = std::make_shared<MockSpeech>();
  remote->local = false;
  CHECK(code_of([&] { s.register_speech_adapter(remote); }) == Errc::InvalidArgument);
}

TEST_CASE("concurrent turns are serialized") {
  const auto l = small_model();
  SessionOptions o;
  o.gen.max_new_tokens = 6;
  Session s(l.model, l.vocab, o);
  const auto want = s.translate("abcd").output_text;
  std::vector<std::string> got(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) threads.emplace_back([&, i] { got[i] = s.translate("abcd").output_text; });
  for (auto& t : threads) t.join();
  for (const auto& g : got) CHECK(g == want);
}

TEST_CASE("vocab must match the model") {
  const auto l = small_model();
  gguf::Metadata md;
  fx::add_small_vocab(md, 20);
  gguf::WriteSpec spec;
  spec.metadata = md;
  const auto f = gguf::parse(std::make_shared<OwnedBytes>(gguf::write(spec)));
  auto other = std::make_shared<const tok::Vocab>(tok::load_vocab(f));
  CHECK(code_of([&] { Session(l.model, other); }) == Errc::VocabSizeMismatch);
}
