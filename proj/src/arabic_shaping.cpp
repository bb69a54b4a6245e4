#include "glyphclass/arabic_shaping.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/uscript.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

#include "glyphclass/error.hpp"
#include "glyphclass/utf8.hpp"

namespace glyphclass::shaping {

// Defined in the build-generated joining_data.cpp.
extern const char* const kBuiltinJoiningData;

namespace {

struct FormRow {
  char32_t base, isolated, final_form, initial, medial;
};

constexpr FormRow kForms[] = {
#include "glyphclass/detail/presentation_forms.inc"
};

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool parse_hex(std::string_view s, char32_t& out) {
  std::uint32_t value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value, 16);
  if (ec != std::errc{} || ptr != s.data() + s.size() || value > 0x10FFFF) return false;
  out = value;
  return true;
}

bool is_removed(char32_t cp) {
  const auto category = u_charType(static_cast<UChar32>(cp));
  if (category == U_CONTROL_CHAR) return !u_isUWhiteSpace(static_cast<UChar32>(cp));
  if (category == U_FORMAT_CHAR)
    return !u_hasBinaryProperty(static_cast<UChar32>(cp), UCHAR_PREPENDED_CONCATENATION_MARK);
  return false;
}

bool is_arabic_script(char32_t cp) {
  if (cp == kTatweel) return true;
  UErrorCode status = U_ZERO_ERROR;
  return uscript_getScript(static_cast<UChar32>(cp), &status) == USCRIPT_ARABIC && U_SUCCESS(status);
}

}  // namespace

std::string_view to_string(JoiningClass cls) {
  switch (cls) {
    case JoiningClass::Dual: return "Dual";
    case JoiningClass::RightJoining: return "RightJoining";
    case JoiningClass::NonJoining: return "NonJoining";
    case JoiningClass::Transparent: return "Transparent";
  }
  return "?";
}

std::string_view to_string(Form form) {
  switch (form) {
    case Form::Isolated: return "Isolated";
    case Form::Initial: return "Initial";
    case Form::Medial: return "Medial";
    case Form::Final: return "Final";
  }
  return "?";
}

JoiningTable JoiningTable::parse(std::string_view text) {
  JoiningTable table;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto eol = text.find('\n');
    std::string_view line = text.substr(0, eol);
    text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    std::array<std::string_view, 4> fields{};
    std::size_t count = 0;
    while (count < fields.size()) {
      const auto semi = line.find(';');
      fields[count++] = trim(line.substr(0, semi));
      if (semi == std::string_view::npos) break;
      line = line.substr(semi + 1);
    }
    if (count < 3) fail(ErrorKind::Parse, "joining data line " + std::to_string(line_no) + ": expected at least 3 fields");

    char32_t first = 0;
    char32_t last = 0;
    const auto range = fields[0].find("..");
    const bool ok = range == std::string_view::npos
                        ? parse_hex(fields[0], first) && parse_hex(fields[0], last)
                        : parse_hex(fields[0].substr(0, range), first) && parse_hex(fields[0].substr(range + 2), last);
    if (!ok || last < first)
      fail(ErrorKind::Parse, "joining data line " + std::to_string(line_no) + ": bad code point field");

    JoiningClass cls;
    if (fields[2] == "D" || fields[2] == "C") {
      cls = JoiningClass::Dual;
    } else if (fields[2] == "R") {
      cls = JoiningClass::RightJoining;
    } else if (fields[2] == "T") {
      cls = JoiningClass::Transparent;
    } else if (fields[2] == "U" || fields[2] == "L") {
      cls = JoiningClass::NonJoining;
    } else {
      fail(ErrorKind::Parse, "joining data line " + std::to_string(line_no) + ": unknown joining type '" +
                                 std::string(fields[2]) + "'");
    }
    for (char32_t cp = first; cp <= last; ++cp) table.listed_[cp] = cls;
  }
  return table;
}

JoiningTable JoiningTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read joining data " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

const JoiningTable& JoiningTable::builtin() {
  static const JoiningTable table = parse(kBuiltinJoiningData);
  return table;
}

JoiningClass JoiningTable::classify(char32_t cp) const {
  if (const auto it = listed_.find(cp); it != listed_.end()) return it->second;
  switch (u_charType(static_cast<UChar32>(cp))) {
    case U_NON_SPACING_MARK:
    case U_ENCLOSING_MARK:
    case U_FORMAT_CHAR:
      return JoiningClass::Transparent;
    default:
      return JoiningClass::NonJoining;
  }
}

JoiningClass joining_class(char32_t cp) { return JoiningTable::builtin().classify(cp); }

bool is_combining_mark(char32_t cp) {
  const auto category = u_charType(static_cast<UChar32>(cp));
  return category == U_NON_SPACING_MARK || category == U_ENCLOSING_MARK;
}

std::u32string normalize(std::u32string_view text) {
  std::u32string kept;
  kept.reserve(text.size());
  std::copy_if(text.begin(), text.end(), std::back_inserter(kept), [](char32_t cp) { return !is_removed(cp); });

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) fail(ErrorKind::Io, "ICU NFC normalizer unavailable");
  const auto source = icu::UnicodeString::fromUTF32(reinterpret_cast<const UChar32*>(kept.data()),
                                                    static_cast<std::int32_t>(kept.size()));
  const icu::UnicodeString composed = nfc->normalize(source, status);
  if (U_FAILURE(status)) fail(ErrorKind::Decode, "canonical composition failed");

  std::u32string out(static_cast<std::size_t>(composed.countChar32()), U'\0');
  composed.toUTF32(reinterpret_cast<UChar32*>(out.data()), static_cast<std::int32_t>(out.size()), status);
  return out;
}

std::u32string normalize_utf8(std::string_view bytes) { return normalize(utf8::decode(bytes)); }

std::vector<Cluster> cluster(std::u32string_view text, const ShapingOptions& options) {
  std::vector<Cluster> out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    if (is_combining_mark(cp) && options.fuse_marks) {
      if (out.empty()) out.push_back(Cluster{kPlaceholderBase, {}});
      out.back().marks.push_back(cp);
    } else {
      out.push_back(Cluster{cp, {}});
    }
  }
  return out;
}

std::vector<ShapedCluster> shape(std::span<const Cluster> clusters, const JoiningTable& table,
                                 const ShapingOptions& options) {
  std::vector<JoiningClass> classes;
  classes.reserve(clusters.size());
  for (const auto& c : clusters) {
    const JoiningClass cls = table.classify(c.base);
    // Only Arabic-script bases take part in joining.
    classes.push_back(cls == JoiningClass::Transparent || is_arabic_script(c.base) ? cls : JoiningClass::NonJoining);
  }

  std::vector<ShapedCluster> out;
  out.reserve(clusters.size());
  for (const auto& c : clusters) out.push_back(ShapedCluster{c, Form::Isolated});
  if (!options.contextual_forms) return out;

  // Index of the nearest non-transparent cluster on each side.
  constexpr std::ptrdiff_t kNone = -1;
  std::ptrdiff_t prev = kNone;
  const auto n = static_cast<std::ptrdiff_t>(clusters.size());
  std::vector<std::ptrdiff_t> next(clusters.size(), kNone);
  for (std::ptrdiff_t i = n - 1, seen = kNone; i >= 0; --i) {
    next[i] = seen;
    if (classes[i] != JoiningClass::Transparent) seen = i;
  }
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const JoiningClass cls = classes[i];
    if (cls == JoiningClass::Transparent) continue;
    const bool joins_prev = (cls == JoiningClass::Dual || cls == JoiningClass::RightJoining) && prev != kNone &&
                            classes[prev] == JoiningClass::Dual;
    const bool joins_next = cls == JoiningClass::Dual && next[i] != kNone &&
                            (classes[next[i]] == JoiningClass::Dual || classes[next[i]] == JoiningClass::RightJoining);
    out[i].form = joins_prev ? (joins_next ? Form::Medial : Form::Final) : (joins_next ? Form::Initial : Form::Isolated);
    prev = i;
  }
  return out;
}

char32_t presentation_form(char32_t base, Form form) {
  const auto it = std::lower_bound(std::begin(kForms), std::end(kForms), base,
                                   [](const FormRow& row, char32_t cp) { return row.base < cp; });
  if (it == std::end(kForms) || it->base != base) return 0;
  switch (form) {
    case Form::Isolated: return it->isolated;
    case Form::Final: return it->final_form;
    case Form::Initial: return it->initial;
    case Form::Medial: return it->medial;
  }
  return 0;
}

char32_t display_codepoint(char32_t base, Form form) {
  const char32_t cp = presentation_form(base, form);
  return cp != 0 ? cp : base;
}

std::vector<ShapedCluster> Shaper::operator()(std::string_view utf8_text) const {
  const std::u32string decoded = utf8::decode(utf8_text);
  return (*this)(std::u32string_view(decoded));
}

std::vector<ShapedCluster> Shaper::operator()(std::u32string_view text) const {
  const auto clusters = cluster(normalize(text), options_);
  return shape(clusters, *table_, options_);
}

}  // namespace glyphclass::shaping
