#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace glyphclass::utf8 {

/// Decodes UTF-8, rejecting overlong forms, surrogates and truncated
/// sequences. Throws Error{Decode} naming the offending byte offset.
std::u32string decode(std::string_view bytes);

std::string encode(std::u32string_view text);

void append(std::string& out, char32_t cp);

}  // namespace glyphclass::utf8
