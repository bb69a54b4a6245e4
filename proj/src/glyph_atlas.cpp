#include "glyphclass/glyph_atlas.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "glyphclass/error.hpp"

namespace glyphclass::atlas {

namespace {

constexpr char kMagic[4] = {'A', 'G', 'L', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::string_view kFallbackToken = "FALLBACK";
const GlyphBitmap kBlank{};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      fail(ErrorKind::Truncation, "atlas truncated: expected at least " + std::to_string(pos_ + n) +
                                      " bytes, file has " + std::to_string(bytes_.size()));
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  void bitmap(GlyphBitmap& out) {
    need(kGlyphBytes);
    std::memcpy(out.pixels.data(), bytes_.data() + pos_, kGlyphBytes);
    pos_ += kGlyphBytes;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, std::string("cannot read ") + what + " " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

std::string GlyphKey::to_string() const {
  std::string out;
  char buf[16];
  for (std::size_t i = 0; i < codepoints.size(); ++i) {
    if (i) out.push_back('+');
    std::snprintf(buf, sizeof buf, "%04X", static_cast<unsigned>(codepoints[i]));
    out += buf;
  }
  return out;
}

GlyphKey GlyphKey::parse(std::string_view text) {
  GlyphKey key;
  while (true) {
    const auto plus = text.find('+');
    const std::string_view part = text.substr(0, plus);
    std::uint32_t value = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value, 16);
    if (part.empty() || ec != std::errc{} || ptr != part.data() + part.size() || value > 0x10FFFF)
      fail(ErrorKind::Parse, "bad glyph key '" + std::string(text) + "'");
    key.codepoints.push_back(value);
    if (plus == std::string_view::npos) break;
    text.remove_prefix(plus + 1);
  }
  if (key.codepoints.size() > kMaxKeyLength)
    fail(ErrorKind::Parse, "glyph key longer than " + std::to_string(kMaxKeyLength) + " code points");
  return key;
}

GlyphAtlas::GlyphAtlas(std::vector<std::pair<GlyphKey, GlyphBitmap>> entries, GlyphBitmap fallback)
    : fallback_(fallback) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& key = entries[i].first;
    if (key.codepoints.empty() || key.codepoints.size() > kMaxKeyLength)
      fail(ErrorKind::Parse, "glyph key must hold 1 to 8 code points");
    if (i > 0 && entries[i - 1].first == key) fail(ErrorKind::Duplicate, "duplicate glyph key " + key.to_string());
  }
  keys_.reserve(entries.size());
  bitmaps_.reserve(entries.size());
  for (auto& [key, bitmap] : entries) {
    index_.emplace(key, static_cast<GlyphId>(keys_.size() + 2));
    keys_.push_back(std::move(key));
    bitmaps_.push_back(bitmap);
  }
}

GlyphAtlas GlyphAtlas::build(const std::filesystem::path& glyph_dir, const std::filesystem::path& manifest) {
  const std::string text = read_file(manifest, "manifest");
  std::vector<std::pair<GlyphKey, GlyphBitmap>> entries;
  std::optional<GlyphBitmap> fallback;
  std::size_t line_no = 0;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      fail(ErrorKind::Parse, "manifest line " + std::to_string(line_no) + ": expected '<key>\\t<file>'");
    const std::string_view key_text = std::string_view(line).substr(0, tab);
    const std::filesystem::path file = glyph_dir / line.substr(tab + 1);

    const std::string pixels = read_file(file, "glyph bitmap");
    if (pixels.size() != kGlyphBytes)
      fail(ErrorKind::Size, "glyph file " + file.string() + " has " + std::to_string(pixels.size()) +
                                " bytes, expected " + std::to_string(kGlyphBytes));
    GlyphBitmap bitmap;
    std::memcpy(bitmap.pixels.data(), pixels.data(), kGlyphBytes);

    if (key_text == kFallbackToken) {
      if (fallback) fail(ErrorKind::Duplicate, "manifest line " + std::to_string(line_no) + ": second FALLBACK entry");
      fallback = bitmap;
      continue;
    }
    GlyphKey key;
    try {
      key = GlyphKey::parse(key_text);
    } catch (const Error& e) {
      fail(ErrorKind::Parse, "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    entries.emplace_back(std::move(key), bitmap);
  }
  return GlyphAtlas(std::move(entries), fallback.value_or(GlyphBitmap{}));
}

std::string GlyphAtlas::serialize() const {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(kGlyphSize));
  put_u32(out, static_cast<std::uint32_t>(keys_.size()));
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    out.push_back(static_cast<char>(keys_[i].codepoints.size()));
    for (char32_t cp : keys_[i].codepoints) put_u32(out, static_cast<std::uint32_t>(cp));
    out.append(reinterpret_cast<const char*>(bitmaps_[i].pixels.data()), kGlyphBytes);
  }
  out.append(reinterpret_cast<const char*>(fallback_.pixels.data()), kGlyphBytes);
  return out;
}

GlyphAtlas GlyphAtlas::deserialize(std::string_view bytes) {
  Reader in(bytes);
  in.need(4);
  if (bytes.substr(0, 4) != std::string_view(kMagic, 4)) fail(ErrorKind::Format, "not a glyph atlas: bad magic");
  for (int i = 0; i < 4; ++i) in.u8();
  if (const auto version = in.u32(); version != kVersion)
    fail(ErrorKind::Format, "unsupported atlas version " + std::to_string(version));
  if (const auto size = in.u32(); size != kGlyphSize)
    fail(ErrorKind::Format, "unsupported glyph size " + std::to_string(size));
  const std::uint32_t count = in.u32();
  std::vector<std::pair<GlyphKey, GlyphBitmap>> entries;
  entries.reserve(std::min<std::size_t>(count, bytes.size() / kGlyphBytes + 1));
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint8_t length = in.u8();
    if (length == 0 || length > kMaxKeyLength)
      fail(ErrorKind::Format, "atlas entry " + std::to_string(e) + " has key length " + std::to_string(length));
    GlyphKey key;
    for (std::uint8_t k = 0; k < length; ++k) key.codepoints.push_back(in.u32());
    GlyphBitmap bitmap;
    in.bitmap(bitmap);
    entries.emplace_back(std::move(key), bitmap);
  }
  GlyphBitmap fallback;
  in.bitmap(fallback);
  if (in.remaining() != 0)
    fail(ErrorKind::Format, "atlas has " + std::to_string(in.remaining()) + " trailing bytes");
  return GlyphAtlas(std::move(entries), fallback);
}

GlyphAtlas GlyphAtlas::load(const std::filesystem::path& path) { return deserialize(read_file(path, "atlas")); }

void GlyphAtlas::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write atlas " + path.string());
  const std::string bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::Io, "short write to " + path.string());
}

const GlyphBitmap& GlyphAtlas::bitmap(GlyphId id) const {
  if (id == kPadId) return kBlank;
  if (id == kFallbackId || id - 2 >= bitmaps_.size()) return fallback_;
  return bitmaps_[id - 2];
}

const GlyphBitmap* GlyphAtlas::find(const GlyphKey& key) const {
  const auto it = index_.find(key);
  return it == index_.end() ? nullptr : &bitmaps_[it->second - 2];
}

GlyphId GlyphAtlas::lookup_id(const shaping::ShapedCluster& sc) const {
  const auto probe = [this](const GlyphKey& key) {
    const auto it = index_.find(key);
    return it == index_.end() ? kFallbackId : it->second;
  };
  const char32_t positional = shaping::display_codepoint(sc.cluster.base, sc.form);
  if (!sc.cluster.marks.empty() && sc.cluster.marks.size() < kMaxKeyLength) {
    GlyphKey full{{positional}};
    full.codepoints.insert(full.codepoints.end(), sc.cluster.marks.begin(), sc.cluster.marks.end());
    if (const GlyphId id = probe(full); id != kFallbackId) return id;
  }
  if (const GlyphId id = probe(GlyphKey{{positional}}); id != kFallbackId) return id;
  const char32_t isolated = shaping::display_codepoint(sc.cluster.base, shaping::Form::Isolated);
  if (const GlyphId id = probe(GlyphKey{{isolated}}); id != kFallbackId) return id;
  return kFallbackId;
}

void write_feature(const GlyphBitmap& bitmap, float* out) {
  for (std::size_t i = 0; i < kGlyphBytes; ++i) out[i] = static_cast<float>(bitmap.pixels[i]) / 255.0f;
}

nn::Tensor to_feature(const GlyphBitmap& bitmap) {
  nn::Tensor plane({1, kGlyphSize, kGlyphSize});
  write_feature(bitmap, plane.data());
  return plane;
}

}  // namespace glyphclass::atlas
