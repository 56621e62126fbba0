#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "omt/error.hpp"
#include "omt/pipeline.hpp"
#include "omt/text.hpp"

namespace omt::pipeline {

std::string_view direction_code(Direction d) noexcept { return d == Direction::ViToEn ? "vi-en" : "en-vi"; }

Direction parse_direction(std::string_view code) {
  if (code == "vi-en") return Direction::ViToEn;
  if (code == "en-vi") return Direction::EnToVi;
  fail(Errc::InvalidArgument, "unknown direction '" + std::string(code) + "' (expected vi-en or en-vi)");
}

std::string_view source_language(Direction d) noexcept { return d == Direction::ViToEn ? "Vietnamese" : "English"; }
std::string_view target_language(Direction d) noexcept { return d == Direction::ViToEn ? "English" : "Vietnamese"; }
Direction flipped(Direction d) noexcept { return d == Direction::ViToEn ? Direction::EnToVi : Direction::ViToEn; }

PromptWording default_wording() {
  // Kept in sync with config/prompts.json.
  return {
      "You are a translator. Translate the user's Vietnamese text into English. "
      "Reply with the English translation only.",
      "You are a translator. Translate the user's English text into Vietnamese. "
      "Reply with the Vietnamese translation only.",
  };
}

PromptWording load_wording(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::IoError, "cannot open " + path.string());
  PromptWording w = default_wording();
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.contains("system")) {
      const auto& s = j.at("system");
      if (s.contains("vi-en")) w.system_vi_en = s.at("vi-en").get<std::string>();
      if (s.contains("en-vi")) w.system_en_vi = s.at("en-vi").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::InvalidArgument, path.string() + ": " + e.what());
  }
  if (!text::is_valid_utf8(w.system_vi_en) || !text::is_valid_utf8(w.system_en_vi)) {
    fail(Errc::InvalidArgument, path.string() + ": prompt text is not valid UTF-8");
  }
  return w;
}

std::string_view family_name(ChatFamily f) noexcept {
  switch (f) {
    case ChatFamily::Zephyr: return "zephyr";
    case ChatFamily::ChatMl: return "chatml";
    case ChatFamily::Llama2: return "llama2";
  }
  return "zephyr";
}

ChatFamily detect_family(std::string_view t) noexcept {
  if (t.find("<|im_start|>") != std::string_view::npos) return ChatFamily::ChatMl;
  if (t.find("[INST]") != std::string_view::npos) return ChatFamily::Llama2;
  return ChatFamily::Zephyr;
}

PromptTemplate make_template(ChatFamily family, PromptWording wording, std::string eos_text) {
  PromptTemplate t;
  t.family = family;
  t.wording = std::move(wording);
  t.eos_text = std::move(eos_text);
  switch (family) {
    case ChatFamily::Zephyr:
      t.assistant_header = "<|assistant|>\n";
      t.stop_strings = {t.eos_text, "<|user|>", "<|system|>"};
      t.role_markers = {"<|system|>", "<|user|>", "<|assistant|>"};
      break;
    case ChatFamily::ChatMl:
      t.assistant_header = "<|im_start|>assistant\n";
      t.stop_strings = {"<|im_end|>", "<|im_start|>", t.eos_text};
      t.role_markers = {"<|im_start|>", "<|im_end|>"};
      break;
    case ChatFamily::Llama2:
      t.assistant_header = " [/INST]";
      t.stop_strings = {t.eos_text, "[INST]"};
      t.role_markers = {"[INST]", "[/INST]", "<<SYS>>", "<</SYS>>"};
      break;
  }
  std::erase(t.stop_strings, std::string());
  return t;
}

PromptTemplate template_for_file(const gguf::GgufFile& file, const tok::Vocab& vocab, PromptWording wording) {
  ChatFamily family = ChatFamily::Zephyr;
  if (const auto* v = file.find("tokenizer.chat_template"); v && v->type() == gguf::MetaType::String) {
    family = detect_family(v->as_string());
  }
  std::string eos = "</s>";
  if (vocab.valid(vocab.eos)) eos = vocab.pieces[static_cast<std::size_t>(vocab.eos)];
  return make_template(family, std::move(wording), eos);
}

std::vector<tok::Segment> render_segments(const PromptTemplate& t, Direction direction, std::string_view text) {
  if (text::trim(text).empty()) fail(Errc::EmptyInput, "source text is empty");
  const std::string& sys = t.wording.system_for(direction);
  const std::string user(text);
  switch (t.family) {
    case ChatFamily::Zephyr:
      return {{"<|system|>\n", true},
              {sys, false},
              {t.eos_text + "\n<|user|>\n", true},
              {user, false},
              {t.eos_text + "\n" + t.assistant_header, true}};
    case ChatFamily::ChatMl:
      return {{"<|im_start|>system\n", true},
              {sys, false},
              {"<|im_end|>\n<|im_start|>user\n", true},
              {user, false},
              {"<|im_end|>\n" + t.assistant_header, true}};
    case ChatFamily::Llama2:
      return {{"[INST] <<SYS>>\n", true}, {sys, false}, {"\n<</SYS>>\n\n", true}, {user, false}, {t.assistant_header, true}};
  }
  return {};
}

std::string build_prompt(const PromptTemplate& t, Direction direction, std::string_view text) {
  std::string out;
  for (const auto& seg : render_segments(t, direction, text)) out += seg.text;
  return out;
}

std::string postprocess(std::string_view raw, const PromptTemplate& t) {
  const std::string_view header = text::trim(t.assistant_header);
  std::string s(raw);
  while (true) {
    const std::string before = s;
    std::string_view v = text::trim(s);
    while (!header.empty() && text::starts_with(v, header)) v = text::trim(v.substr(header.size()));
    s = std::string(v);
    std::size_t cut = s.size();
    for (const auto& stop : t.stop_strings) cut = std::min(cut, s.find(stop));
    s.resize(cut);
    for (const auto& m : t.role_markers) text::replace_all(s, m, "");
    s = text::collapse_whitespace(s);
    if (s == before) return s;
  }
}

}  // namespace omt::pipeline
