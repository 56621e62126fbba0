#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 and whitespace helpers shared by the tokenizer, the pipeline and the
// evaluation tools. Normalization is backed by ICU.
namespace omt::text {

bool is_valid_utf8(std::string_view s) noexcept;

// Length of the UTF-8 sequence introduced by `lead`, 1 for stray bytes.
std::size_t utf8_seq_len(unsigned char lead) noexcept;

// Canonical composition. Throws Error(InvalidArgument) on invalid UTF-8.
std::string nfc(std::string_view s);
bool is_nfc(std::string_view s);

bool is_ascii_space(char c) noexcept;
std::string_view trim(std::string_view s) noexcept;
// Trim, then replace every run of ASCII whitespace with a single space.
std::string collapse_whitespace(std::string_view s);
std::vector<std::string_view> split_whitespace(std::string_view s);

bool starts_with(std::string_view s, std::string_view prefix) noexcept;
void replace_all(std::string& s, std::string_view from, std::string_view to);

}  // namespace omt::text
