#include "glyphclass/utf8.hpp"

#include <cstdint>

#include "glyphclass/error.hpp"

namespace glyphclass::utf8 {

namespace {

[[noreturn]] void malformed(std::size_t offset, const char* what) {
  fail(ErrorKind::Decode, "malformed UTF-8 at byte offset " + std::to_string(offset) + ": " + what);
}

}  // namespace

std::u32string decode(std::string_view bytes) {
  std::u32string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const auto lead = static_cast<std::uint8_t>(bytes[i]);
    if (lead < 0x80) {
      out.push_back(lead);
      ++i;
      continue;
    }
    std::size_t length = 0;
    char32_t cp = 0;
    char32_t min_value = 0;
    if ((lead & 0xE0) == 0xC0) {
      length = 2, cp = lead & 0x1F, min_value = 0x80;
    } else if ((lead & 0xF0) == 0xE0) {
      length = 3, cp = lead & 0x0F, min_value = 0x800;
    } else if ((lead & 0xF8) == 0xF0) {
      length = 4, cp = lead & 0x07, min_value = 0x10000;
    } else {
      malformed(i, "invalid lead byte");
    }
    if (i + length > bytes.size()) malformed(i, "truncated sequence");
    for (std::size_t k = 1; k < length; ++k) {
      const auto cont = static_cast<std::uint8_t>(bytes[i + k]);
      if ((cont & 0xC0) != 0x80) malformed(i + k, "invalid continuation byte");
      cp = (cp << 6) | (cont & 0x3F);
    }
    if (cp < min_value) malformed(i, "overlong encoding");
    if (cp > 0x10FFFF) malformed(i, "code point beyond U+10FFFF");
    if (cp >= 0xD800 && cp <= 0xDFFF) malformed(i, "surrogate code point");
    out.push_back(cp);
    i += length;
  }
  return out;
}

void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

std::string encode(std::u32string_view text) {
  std::string out;
  out.reserve(text.size() * 2);
  for (char32_t cp : text) append(out, cp);
  return out;
}

}  // namespace glyphclass::utf8
