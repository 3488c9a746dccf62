#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace kronembed::utf8 {

/// Strict validation: rejects overlong forms, surrogates and values above U+10FFFF.
bool is_valid(std::string_view bytes) noexcept;

/// Appends the UTF-8 encoding of `cp` to `out`. Throws FormatError for
/// surrogates and values above U+10FFFF.
void append(std::string& out, char32_t cp);

std::string encode(char32_t cp);

/// Decodes valid UTF-8 into codepoints. Throws FormatError on invalid input.
std::vector<char32_t> decode(std::string_view bytes);

inline bool is_continuation(unsigned char b) noexcept { return (b & 0xC0u) == 0x80u; }

}  // namespace kronembed::utf8
