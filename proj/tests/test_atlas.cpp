#include <gtest/gtest.h>

#include <fstream>

#include "glyphclass/error.hpp"
#include "glyphclass/glyph_atlas.hpp"
#include "expect_error.hpp"
#include "support.hpp"

namespace gc = glyphclass;
using testing_support::kind_of;
using namespace gc::atlas;
using gc::shaping::Cluster;
using gc::shaping::Form;
using gc::shaping::ShapedCluster;

namespace {

GlyphBitmap filled(std::uint8_t value) {
  GlyphBitmap b;
  b.pixels.fill(value);
  return b;
}

void write_bytes(const std::filesystem::path& path, std::size_t n, std::uint8_t value) {
  std::ofstream out(path, std::ios::binary);
  const std::string bytes(n, static_cast<char>(value));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(GlyphKeyTest, TextRoundTrip) {
  const GlyphKey key{{0xFE91, 0x064E}};
  EXPECT_EQ(key.to_string(), "FE91+064E");
  EXPECT_EQ(GlyphKey::parse("FE91+064E"), key);
  EXPECT_EQ(GlyphKey::parse("20"), (GlyphKey{{0x20}}));
  EXPECT_THROW(GlyphKey::parse(""), gc::Error);
  EXPECT_THROW(GlyphKey::parse("FE91+"), gc::Error);
  EXPECT_THROW(GlyphKey::parse("XYZ"), gc::Error);
  EXPECT_THROW(GlyphKey::parse("1+2+3+4+5+6+7+8+9"), gc::Error);
}

TEST(BuildAtlas, EmptyManifest) {
  testing_support::TempDir dir;
  std::ofstream(dir / "manifest.txt").close();
  const auto atlas = GlyphAtlas::build(dir.path(), dir / "manifest.txt");
  EXPECT_EQ(atlas.size(), 0u);
  EXPECT_EQ(atlas.fallback(), GlyphBitmap{});
}

TEST(BuildAtlas, CountsEntriesAndReadsFallback) {
  testing_support::TempDir dir;
  write_bytes(dir / "a.raw", kGlyphBytes, 10);
  write_bytes(dir / "b.raw", kGlyphBytes, 20);
  write_bytes(dir / "f.raw", kGlyphBytes, 30);
  std::ofstream(dir / "m.txt") << "FE8F\ta.raw\nFE91+064E\tb.raw\nFALLBACK\tf.raw\n";
  const auto atlas = GlyphAtlas::build(dir.path(), dir / "m.txt");
  EXPECT_EQ(atlas.size(), 2u);
  EXPECT_EQ(atlas.fallback(), filled(30));
  ASSERT_NE(atlas.find(GlyphKey{{0xFE91, 0x064E}}), nullptr);
  EXPECT_EQ(*atlas.find(GlyphKey{{0xFE91, 0x064E}}), filled(20));
}

TEST(BuildAtlas, Errors) {
  testing_support::TempDir dir;
  write_bytes(dir / "short.raw", kGlyphBytes - 1, 1);
  write_bytes(dir / "ok.raw", kGlyphBytes, 1);
  std::ofstream(dir / "short.txt") << "FE8F\tshort.raw\n";
  try {
    GlyphAtlas::build(dir.path(), dir / "short.txt");
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.kind(), gc::ErrorKind::Size);
    EXPECT_NE(std::string(e.what()).find("short.raw"), std::string::npos);
  }
  std::ofstream(dir / "dup.txt") << "FE8F\tok.raw\nFE8F\tok.raw\n";
  EXPECT_EQ(kind_of([&] { GlyphAtlas::build(dir.path(), dir / "dup.txt"); }), gc::ErrorKind::Duplicate);
  std::ofstream(dir / "bad.txt") << "FE8F\tok.raw\nnot a record\n";
  try {
    GlyphAtlas::build(dir.path(), dir / "bad.txt");
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.kind(), gc::ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(AtlasFile, RoundTripAndExactSize) {
  std::vector<std::pair<GlyphKey, GlyphBitmap>> entries;
  std::mt19937_64 rng(3);
  std::size_t expected = 16 + kGlyphBytes;
  for (std::size_t k = 1; k <= 5; ++k) {
    GlyphKey key;
    for (std::size_t j = 0; j < k; ++j) key.codepoints.push_back(static_cast<char32_t>(0xFE80 + k * 10 + j));
    GlyphBitmap b;
    for (auto& p : b.pixels) p = static_cast<std::uint8_t>(rng());
    entries.emplace_back(key, b);
    expected += 1 + 4 * k + kGlyphBytes;  // u8 key length, code points, pixels
  }
  const GlyphAtlas atlas(entries, filled(7));
  testing_support::TempDir dir;
  atlas.save(dir / "a.aglf");
  EXPECT_EQ(std::filesystem::file_size(dir / "a.aglf"), expected);
  const auto loaded = GlyphAtlas::load(dir / "a.aglf");
  EXPECT_EQ(loaded, atlas);
  EXPECT_EQ(loaded.serialize(), atlas.serialize());
}

TEST(AtlasFile, EmptyRoundTrip) {
  const GlyphAtlas empty;
  EXPECT_EQ(GlyphAtlas::deserialize(empty.serialize()), empty);
  EXPECT_EQ(empty.serialize().size(), 16 + kGlyphBytes);
}

TEST(AtlasFile, FormatAndTruncationErrors) {
  const GlyphAtlas atlas({{GlyphKey{{0x41}}, filled(1)}}, filled(2));
  std::string bytes = atlas.serialize();
  std::string bad = bytes;
  bad.replace(0, 4, "XXXX");
  EXPECT_EQ(kind_of([&] { GlyphAtlas::deserialize(bad); }), gc::ErrorKind::Format);
  std::string version = bytes;
  version[4] = 2;
  EXPECT_EQ(kind_of([&] { GlyphAtlas::deserialize(version); }), gc::ErrorKind::Format);
  try {
    GlyphAtlas::deserialize(bytes.substr(0, bytes.size() - 10));
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.kind(), gc::ErrorKind::Truncation);
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(bytes.size())), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(bytes.size() - 10)), std::string::npos) << msg;
  }
  EXPECT_EQ(kind_of([&] { GlyphAtlas::deserialize(bytes + "x"); }), gc::ErrorKind::Format);
}

TEST(Lookup, ResolutionChain) {
  // beh initial FE91, beh isolated FE8F
  const GlyphAtlas atlas({{GlyphKey{{0xFE91, 0x064E}}, filled(1)},
                          {GlyphKey{{0xFE91}}, filled(2)},
                          {GlyphKey{{0xFE8F}}, filled(3)}},
                         filled(9));
  const auto sc = [](char32_t base, std::vector<char32_t> marks, Form form) {
    return ShapedCluster{Cluster{base, std::move(marks)}, form};
  };
  EXPECT_EQ(atlas.lookup(sc(0x0628, {0x064E}, Form::Initial)), filled(1));
  EXPECT_EQ(atlas.lookup(sc(0x0628, {0x064F}, Form::Initial)), filled(2));
  EXPECT_EQ(atlas.lookup(sc(0x0628, {}, Form::Medial)), filled(3));
  EXPECT_EQ(atlas.lookup(sc(0x0633, {}, Form::Isolated)), filled(9));
  EXPECT_EQ(atlas.lookup_id(sc(0x0633, {}, Form::Isolated)), kFallbackId);
  EXPECT_EQ(atlas.bitmap(kPadId), GlyphBitmap{});
  EXPECT_EQ(atlas.id_count(), 5u);
  // Identical lookups return identical ids.
  EXPECT_EQ(atlas.lookup_id(sc(0x0628, {}, Form::Medial)), atlas.lookup_id(sc(0x0628, {}, Form::Medial)));
}

TEST(Lookup, NonArabicBaseUsesItsOwnCodepoint) {
  const GlyphAtlas atlas({{GlyphKey{{U' '}}, filled(4)}}, filled(9));
  EXPECT_EQ(atlas.lookup(ShapedCluster{Cluster{U' ', {}}, Form::Isolated}), filled(4));
}

TEST(ToFeature, Scaling) {
  const auto zero = to_feature(filled(0));
  EXPECT_EQ(zero.shape(), (gc::nn::Shape{1, 36, 36}));
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
  for (float v : to_feature(filled(255)).values()) EXPECT_EQ(v, 1.0f);
  EXPECT_FLOAT_EQ(to_feature(filled(128))[0], 128.0f / 255.0f);
  EXPECT_NEAR(to_feature(filled(128))[0], 0.50196078, 1e-7);
  float prev = -1.0f;
  for (int v = 0; v <= 255; ++v) {
    const float f = to_feature(filled(static_cast<std::uint8_t>(v)))[0];
    EXPECT_GT(f, prev);
    prev = f;
  }
}
