#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace glyphclass::shaping {

enum class JoiningClass { Dual, RightJoining, NonJoining, Transparent };

enum class Form { Isolated, Initial, Medial, Final };

std::string_view to_string(JoiningClass cls);
std::string_view to_string(Form form);

/// Base character that carries combining marks found at the start of a text.
inline constexpr char32_t kPlaceholderBase = U'◌';
inline constexpr char32_t kTatweel = U'ـ';

/// A base character plus the combining marks rendered on it.
struct Cluster {
  char32_t base = 0;
  std::vector<char32_t> marks;

  friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct ShapedCluster {
  Cluster cluster;
  Form form = Form::Isolated;

  friend bool operator==(const ShapedCluster&, const ShapedCluster&) = default;
};

/// Joining-type lookup backed by an ArabicShaping.txt style data file.
///
/// Listed code points take the file's type: D and C (join-causing) become
/// Dual, R becomes RightJoining, T becomes Transparent, U and L become
/// NonJoining. Unlisted code points are Transparent when their general
/// category is Mn, Me or Cf and NonJoining otherwise.
class JoiningTable {
 public:
  /// Parses the semicolon-delimited data. Throws Error{Parse} with the
  /// 1-based line number on a malformed record.
  static JoiningTable parse(std::string_view text);
  static JoiningTable load(const std::filesystem::path& path);

  /// Table compiled in from data/ArabicShaping.txt at build time.
  static const JoiningTable& builtin();

  JoiningClass classify(char32_t cp) const;
  std::size_t size() const { return listed_.size(); }

 private:
  std::unordered_map<char32_t, JoiningClass> listed_;
};

struct ShapingOptions {
  /// When false every cluster is rendered in its isolated form.
  bool contextual_forms = true;
  /// When false every combining mark becomes a cluster of its own.
  bool fuse_marks = true;
};

/// Canonical composition plus removal of control characters (whitespace
/// excepted) and zero-width format characters. Everything else, including
/// tatweel and diacritics, is kept verbatim.
std::u32string normalize(std::u32string_view text);

/// Decodes UTF-8 and normalizes. Throws Error{Decode} with the byte offset.
std::u32string normalize_utf8(std::string_view bytes);

JoiningClass joining_class(char32_t cp);

/// General category Mn or Me.
bool is_combining_mark(char32_t cp);

std::vector<Cluster> cluster(std::u32string_view text, const ShapingOptions& options = {});

std::vector<ShapedCluster> shape(std::span<const Cluster> clusters,
                                 const JoiningTable& table = JoiningTable::builtin(),
                                 const ShapingOptions& options = {});

/// Presentation-form code point for a base letter, or 0 if Unicode defines
/// none for that form.
char32_t presentation_form(char32_t base, Form form);

/// Presentation-form code point if defined, else the base itself.
char32_t display_codepoint(char32_t base, Form form);

/// Bundles a joining table with options; the full text-to-clusters path.
class Shaper {
 public:
  Shaper() = default;
  Shaper(const JoiningTable& table, ShapingOptions options)
      : table_(&table), options_(options) {}

  std::vector<ShapedCluster> operator()(std::string_view utf8_text) const;
  std::vector<ShapedCluster> operator()(std::u32string_view text) const;

  const ShapingOptions& options() const { return options_; }

 private:
  const JoiningTable* table_ = &JoiningTable::builtin();
  ShapingOptions options_;
};

}  // namespace glyphclass::shaping
