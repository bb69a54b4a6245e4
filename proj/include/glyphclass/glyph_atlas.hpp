#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "glyphclass/arabic_shaping.hpp"
#include "glyphclass/tensor.hpp"

namespace glyphclass::atlas {

inline constexpr std::size_t kGlyphSize = 36;
inline constexpr std::size_t kGlyphBytes = kGlyphSize * kGlyphSize;
inline constexpr std::size_t kMaxKeyLength = 8;

/// 36x36 row-major intensities; 0 is background, 255 full ink.
struct GlyphBitmap {
  std::array<std::uint8_t, kGlyphBytes> pixels{};

  friend bool operator==(const GlyphBitmap&, const GlyphBitmap&) = default;
};

/// Display code point of the base followed by its marks (1 to 8 entries).
struct GlyphKey {
  std::vector<char32_t> codepoints;

  /// Hex code points joined by '+', e.g. "FE91+064E".
  std::string to_string() const;
  /// Inverse of to_string(). Throws Error{Parse}.
  static GlyphKey parse(std::string_view text);

  friend auto operator<=>(const GlyphKey&, const GlyphKey&) = default;
  friend bool operator==(const GlyphKey&, const GlyphKey&) = default;
};

/// Index into an atlas. 0 is padding (an all-zero bitmap), 1 is the
/// fallback glyph, entries follow in key order.
using GlyphId = std::uint32_t;
inline constexpr GlyphId kPadId = 0;
inline constexpr GlyphId kFallbackId = 1;

/// Immutable map from glyph keys to bitmaps. Lookups never fail.
class GlyphAtlas {
 public:
  GlyphAtlas() = default;
  /// Throws Error{Duplicate} on a repeated key.
  GlyphAtlas(std::vector<std::pair<GlyphKey, GlyphBitmap>> entries, GlyphBitmap fallback);

  /// Reads the manifest (`hex+hex<TAB>file` per line) and one raw 1,296-byte
  /// bitmap per record from glyph_dir. The key token FALLBACK designates the
  /// fallback glyph.
  static GlyphAtlas build(const std::filesystem::path& glyph_dir, const std::filesystem::path& manifest);

  static GlyphAtlas load(const std::filesystem::path& path);
  static GlyphAtlas deserialize(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  std::string serialize() const;

  std::size_t size() const { return keys_.size(); }
  /// Entries plus the padding and fallback ids.
  std::size_t id_count() const { return keys_.size() + 2; }

  const std::vector<GlyphKey>& keys() const { return keys_; }
  const GlyphBitmap& fallback() const { return fallback_; }
  const GlyphBitmap& bitmap(GlyphId id) const;
  const GlyphBitmap* find(const GlyphKey& key) const;

  /// Resolution chain: positional form plus marks, positional form alone,
  /// isolated form, fallback.
  GlyphId lookup_id(const shaping::ShapedCluster& cluster) const;
  const GlyphBitmap& lookup(const shaping::ShapedCluster& cluster) const { return bitmap(lookup_id(cluster)); }

  friend bool operator==(const GlyphAtlas& a, const GlyphAtlas& b) {
    return a.keys_ == b.keys_ && a.bitmaps_ == b.bitmaps_ && a.fallback_ == b.fallback_;
  }

 private:
  std::vector<GlyphKey> keys_;
  std::vector<GlyphBitmap> bitmaps_;
  std::map<GlyphKey, GlyphId> index_;
  GlyphBitmap fallback_{};
};

/// Maps intensities to [0,1] by /255; output shape [1,36,36].
nn::Tensor to_feature(const GlyphBitmap& bitmap);

/// Writes to_feature(bitmap) into a preallocated 1,296-float span.
void write_feature(const GlyphBitmap& bitmap, float* out);

}  // namespace glyphclass::atlas
