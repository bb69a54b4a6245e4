#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "glyphclass/data.hpp"
#include "glyphclass/error.hpp"
#include "glyphclass/synth.hpp"
#include "glyphclass/utf8.hpp"
#include "expect_error.hpp"
#include "support.hpp"

namespace gc = glyphclass;
using namespace gc::data;
using testing_support::kind_of;
using testing_support::TempDir;

namespace {

Dataset make_dataset(const std::vector<std::size_t>& per_class, std::uint64_t seed = 0) {
  Dataset ds;
  for (std::size_t c = 0; c < per_class.size(); ++c) ds.labels.intern("c" + std::to_string(c));
  std::mt19937_64 rng(seed);
  const auto& letters = gc::synth::alphabet();
  for (std::size_t c = 0; c < per_class.size(); ++c)
    for (std::size_t i = 0; i < per_class[c]; ++i) {
      std::u32string text;
      const std::size_t len = 1 + rng() % 30;
      for (std::size_t k = 0; k < len; ++k) text.push_back(letters[rng() % letters.size()]);
      ds.records.push_back(Record{static_cast<int>(c), gc::utf8::encode(text)});
    }
  return ds;
}

const gc::atlas::GlyphAtlas& test_atlas() {
  static const auto atlas = gc::synth::synth_atlas(0);
  return atlas;
}

const gc::shaping::Shaper kShaper;

std::size_t per_class(const Dataset& ds, int label) {
  return static_cast<std::size_t>(
      std::count_if(ds.records.begin(), ds.records.end(), [&](const Record& r) { return r.label == label; }));
}

std::multiset<std::pair<int, std::string>> as_set(const Dataset& ds) {
  std::multiset<std::pair<int, std::string>> out;
  for (const auto& r : ds.records) out.emplace(r.label, r.text);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- loading

TEST(ParseDataset, InternsLabelsInFirstAppearanceOrder) {
  const auto ds = parse_dataset("b\tبا\na\tس\nb\tمن\n");
  ASSERT_EQ(ds.num_classes(), 2u);
  EXPECT_EQ(ds.labels.name(0), "b");
  EXPECT_EQ(ds.labels.name(1), "a");
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.records[2].label, 0);
  EXPECT_EQ(ds.records[1].text, "س");
  EXPECT_EQ(ds.labels.find("a"), 1);
  EXPECT_FALSE(ds.labels.find("z"));
}

TEST(ParseDataset, MissingTabCitesLine) {
  std::string text;
  for (int i = 0; i < 6; ++i) text += "x\ty\n";
  text += "no tab here\n";
  try {
    parse_dataset(text);
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.kind(), gc::ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 7"), std::string::npos) << e.what();
  }
}

TEST(ParseDataset, DropsEmptyTextAndCountsIt) {
  LoadReport report;
  const auto ds = parse_dataset("a\t​\nb\t\nc\tx\r\n\n", &report);
  EXPECT_EQ(report.dropped_empty, 2u);
  ASSERT_EQ(ds.size(), 1u);
  EXPECT_EQ(ds.records[0].text, "x");
  EXPECT_EQ(ds.num_classes(), 1u);
}

TEST(ParseDataset, Errors) {
  EXPECT_EQ(kind_of([] { parse_dataset(""); }), gc::ErrorKind::EmptyDataset);
  EXPECT_EQ(kind_of([] { parse_dataset("a\t\n"); }), gc::ErrorKind::EmptyDataset);
  EXPECT_EQ(kind_of([] { parse_dataset("a\tok\nb\t\xFF\n"); }), gc::ErrorKind::Decode);
  EXPECT_EQ(kind_of([] { load_dataset("/nonexistent/file.tsv"); }), gc::ErrorKind::Io);
}

TEST(LoadDataset, WriteRoundTrip) {
  TempDir dir;
  const auto ds = make_dataset({4, 3, 2}, 9);
  write_dataset(ds, dir / "d.tsv");
  const auto back = load_dataset(dir / "d.tsv");
  EXPECT_EQ(back.labels, ds.labels);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.records[i].label, ds.records[i].label);
    EXPECT_EQ(back.records[i].text, ds.records[i].text);
  }
}

// ---------------------------------------------------------------- splits

TEST(SplitStratified, Examples) {
  const auto ds = make_dataset({10, 10, 5});
  const auto s = split_stratified(ds, 0.2, 1);
  EXPECT_EQ(per_class(s.train, 0), 8u);
  EXPECT_EQ(per_class(s.test, 0), 2u);
  EXPECT_EQ(per_class(s.train, 2), 4u);
  EXPECT_EQ(per_class(s.test, 2), 1u);
  EXPECT_EQ(s.train.labels, ds.labels);
  EXPECT_EQ(s.test.labels, ds.labels);

  const auto again = split_stratified(ds, 0.2, 1);
  EXPECT_EQ(as_set(again.test), as_set(s.test));
  const auto other = split_stratified(make_dataset({200}), 0.2, 2);
  EXPECT_NE(as_set(other.test), as_set(split_stratified(make_dataset({200}), 0.2, 1).test));
}

TEST(SplitStratified, TwoRecordsGiveOneEach) {
  const auto s = split_stratified(make_dataset({2, 2}), 0.2, 0);
  EXPECT_EQ(per_class(s.train, 0), 1u);
  EXPECT_EQ(per_class(s.test, 0), 1u);
}

TEST(SplitStratified, DisjointCoveringAndProportional) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> sizes;
    const std::size_t classes = 1 + rng() % 6;
    for (std::size_t c = 0; c < classes; ++c) sizes.push_back(2 + rng() % 60);
    const auto ds = make_dataset(sizes, rng());
    const auto s = split_stratified(ds, 0.2, rng());
    auto merged = as_set(s.train);
    for (const auto& r : as_set(s.test)) merged.insert(r);
    EXPECT_EQ(merged, as_set(ds));
    EXPECT_EQ(s.train.size() + s.test.size(), ds.size());
    for (std::size_t c = 0; c < classes; ++c) {
      const double target = 0.2 * static_cast<double>(sizes[c]);
      EXPECT_LE(std::abs(static_cast<double>(per_class(s.test, static_cast<int>(c))) - target), 1.0);
      EXPECT_GE(per_class(s.train, static_cast<int>(c)), 1u);
    }
  }
}

TEST(SplitStratified, Errors) {
  try {
    split_stratified(make_dataset({5, 1}), 0.2, 0);
    FAIL();
  } catch (const gc::Error& e) {
    EXPECT_EQ(e.kind(), gc::ErrorKind::Stratification);
    EXPECT_NE(std::string(e.what()).find("'c1'"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([] { split_stratified(make_dataset({5}), 0.0, 0); }), gc::ErrorKind::Parameter);
  EXPECT_EQ(kind_of([] { split_stratified(make_dataset({5}), 1.0, 0); }), gc::ErrorKind::Parameter);
}

TEST(SplitRandom, DisjointAndSized) {
  const auto ds = make_dataset({30, 20});
  const auto s = split_random(ds, 0.2, 4);
  EXPECT_EQ(s.test.size(), 10u);
  auto merged = as_set(s.train);
  for (const auto& r : as_set(s.test)) merged.insert(r);
  EXPECT_EQ(merged, as_set(ds));
}

// ---------------------------------------------------------------- counts

TEST(ClassCounts, Histogram) {
  Dataset ds = make_dataset({2, 1});
  EXPECT_EQ(class_counts(ds).counts, (std::vector<std::uint64_t>{2, 1}));
  const auto big = make_dataset({7, 7, 7});
  EXPECT_EQ(class_counts(big).counts, (std::vector<std::uint64_t>{7, 7, 7}));
  const auto skewed = make_dataset({40, 3, 9, 1});
  const auto c = class_counts(skewed).counts;
  EXPECT_EQ(std::accumulate(c.begin(), c.end(), std::uint64_t{0}), skewed.size());
}

TEST(ClassCounts, Errors) {
  Dataset ds = make_dataset({2, 1});
  ds.labels.intern("unused");
  EXPECT_EQ(kind_of([&] { class_counts(ds); }), gc::ErrorKind::MissingClass);
  Dataset empty;
  empty.labels.intern("a");
  EXPECT_EQ(kind_of([&] { class_counts(empty); }), gc::ErrorKind::EmptyDataset);
}

// ---------------------------------------------------------------- encoding

TEST(EncodeDocument, PadsToMaxLength) {
  const auto doc = encode_document("بسم", test_atlas(), kShaper, 5);
  EXPECT_EQ(doc.true_len, 3u);
  ASSERT_EQ(doc.glyph_ids.size(), 5u);
  EXPECT_EQ(doc.glyph_ids[3], gc::atlas::kPadId);
  EXPECT_EQ(doc.glyph_ids[4], gc::atlas::kPadId);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_GT(doc.glyph_ids[i], gc::atlas::kFallbackId);
}

TEST(EncodeDocument, TruncatesToMaxLength) {
  std::u32string text;
  const auto& letters = gc::synth::alphabet();
  for (std::size_t i = 0; i < 100; ++i) text.push_back(letters[i % letters.size()]);
  const auto full = encode_document(gc::utf8::encode(text), test_atlas(), kShaper, std::nullopt);
  EXPECT_EQ(full.true_len, 100u);
  EXPECT_EQ(full.glyph_ids.size(), 100u);
  const auto cut = encode_document(gc::utf8::encode(text), test_atlas(), kShaper, 60);
  EXPECT_EQ(cut.true_len, 60u);
  EXPECT_TRUE(std::equal(cut.glyph_ids.begin(), cut.glyph_ids.end(), full.glyph_ids.begin()));
}

TEST(EncodeDocument, UnknownCharacterUsesFallback) {
  const auto doc = encode_document("بxب", test_atlas(), kShaper, std::nullopt);
  ASSERT_EQ(doc.true_len, 3u);
  EXPECT_EQ(doc.glyph_ids[1], gc::atlas::kFallbackId);
  EXPECT_NE(doc.glyph_ids[0], gc::atlas::kFallbackId);
}

TEST(EncodeDocument, SafetyCapWhenUnbounded) {
  const std::string text(5000, 'a');
  const auto doc = encode_document(text, test_atlas(), kShaper, std::nullopt);
  EXPECT_EQ(doc.true_len, kSafetyCap);
  EXPECT_EQ(doc.glyph_ids.size(), kSafetyCap);
}

TEST(EncodeDocument, LengthIsClusterCountCapped) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const std::u32string text = testing_support::random_arabic_text(rng);
    const auto clusters = kShaper(std::u32string_view(text));
    if (clusters.empty()) continue;
    const std::size_t max_len = 1 + rng() % 30;
    const auto doc = encode_document(gc::utf8::encode(text), test_atlas(), kShaper, max_len);
    EXPECT_EQ(doc.true_len, std::min(clusters.size(), max_len));
    EXPECT_EQ(doc.glyph_ids.size(), max_len);
    for (std::size_t k = doc.true_len; k < max_len; ++k) EXPECT_EQ(doc.glyph_ids[k], gc::atlas::kPadId);
  }
}

TEST(EncodeDocument, Errors) {
  EXPECT_EQ(kind_of([] { encode_document("​", test_atlas(), kShaper, 5); }), gc::ErrorKind::EmptyDocument);
  EXPECT_EQ(kind_of([] { encode_document("a", test_atlas(), kShaper, 0); }), gc::ErrorKind::Parameter);
}

TEST(EncodeDataset, ThreadsGiveTheSameResult) {
  const auto ds = make_dataset({30, 17}, 3);
  const auto one = encode_dataset(ds, test_atlas(), kShaper, 12, 1);
  const auto four = encode_dataset(ds, test_atlas(), kShaper, 12, 4);
  EXPECT_EQ(one.labels, four.labels);
  for (std::size_t i = 0; i < one.docs.size(); ++i) {
    EXPECT_EQ(one.docs[i].glyph_ids, four.docs[i].glyph_ids);
    EXPECT_EQ(one.docs[i].true_len, four.docs[i].true_len);
  }
}

// ---------------------------------------------------------------- batching

TEST(Batches, FinalPartialBatchIsEmitted) {
  const auto ds = make_dataset({70, 60});
  const auto batches = batch_iter(ds, test_atlas(), kShaper, 20, BatchOptions{.batch_size = 64, .seed = 1});
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 64u);
  EXPECT_EQ(batches[1].size(), 64u);
  EXPECT_EQ(batches[2].size(), 2u);
  for (const auto& b : batches) {
    EXPECT_EQ(b.length, 20u);
    EXPECT_EQ(b.glyph_ids.size(), b.size() * 20);
  }
}

TEST(Batches, OrderIsAFunctionOfSeedAndEpoch) {
  const auto encoded = encode_dataset(make_dataset({60, 60}, 7), test_atlas(), kShaper, std::nullopt);
  const auto order = [&](std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::vector<gc::atlas::GlyphId>> out;
    for (const auto& b : make_batches(encoded, BatchOptions{.batch_size = 16, .seed = seed, .epoch = epoch}))
      out.push_back(b.glyph_ids);
    return out;
  };
  EXPECT_EQ(order(3, 2), order(3, 2));
  EXPECT_NE(order(3, 2), order(3, 3));
  EXPECT_NE(order(3, 2), order(4, 2));
}

TEST(Batches, EveryDocumentAppearsOnce) {
  const auto encoded = encode_dataset(make_dataset({50, 23, 4}, 2), test_atlas(), kShaper, std::nullopt);
  for (bool bucket : {false, true}) {
    const auto batches = make_batches(encoded, BatchOptions{.batch_size = 8, .seed = 5, .bucket_by_length = bucket});
    std::multiset<std::vector<gc::atlas::GlyphId>> seen, expected;
    for (const auto& d : encoded.docs) expected.insert(d.glyph_ids);
    for (const auto& b : batches)
      for (std::size_t r = 0; r < b.size(); ++r) {
        const auto row = b.glyph_ids.begin() + static_cast<std::ptrdiff_t>(r * b.length);
        seen.insert(std::vector<gc::atlas::GlyphId>(row, row + static_cast<std::ptrdiff_t>(b.lengths[r])));
        EXPECT_TRUE(std::all_of(row + static_cast<std::ptrdiff_t>(b.lengths[r]), row + static_cast<std::ptrdiff_t>(b.length),
                                [](auto id) { return id == gc::atlas::kPadId; }));
      }
    EXPECT_EQ(seen, expected);
  }
}

TEST(Batches, BucketingPadsToLongestInBatch) {
  const auto encoded = encode_dataset(make_dataset({200}, 8), test_atlas(), kShaper, std::nullopt);
  const auto batches = make_batches(encoded, BatchOptions{.batch_size = 16, .seed = 1, .bucket_by_length = true});
  std::size_t padded = 0, total = 0;
  for (const auto& b : batches) {
    EXPECT_EQ(b.length, *std::max_element(b.lengths.begin(), b.lengths.end()));
    for (auto len : b.lengths) {
      padded += b.length - len;
      total += b.length;
    }
  }
  // Sorting by length inside the pool keeps padding small.
  EXPECT_LT(static_cast<double>(padded) / static_cast<double>(total), 0.1);
}

TEST(Batches, SmallTrailingBatchMerges) {
  const auto encoded = encode_dataset(make_dataset({17}), test_atlas(), kShaper, 10);
  const auto merged = make_batches(encoded, BatchOptions{.batch_size = 8, .min_batch = 2});
  ASSERT_EQ(merged.size(), 2u);
  EXPECT_EQ(merged[1].size(), 9u);
  EXPECT_EQ(make_batches(encoded, BatchOptions{.batch_size = 8}).size(), 3u);
}

TEST(Batches, UnshuffledKeepsDatasetOrder) {
  const auto ds = make_dataset({5, 5});
  const auto encoded = encode_dataset(ds, test_atlas(), kShaper, 30);
  const auto batches = make_batches(encoded, BatchOptions{.batch_size = 3, .seed = 9, .shuffle = false});
  std::vector<int> labels;
  for (const auto& b : batches) labels.insert(labels.end(), b.labels.begin(), b.labels.end());
  EXPECT_EQ(labels, encoded.labels);
}

TEST(Batches, BitplanesFollowGlyphIds) {
  const auto encoded = encode_dataset(make_dataset({3}), test_atlas(), kShaper, 31);
  const auto b = make_batches(encoded, BatchOptions{.batch_size = 3, .shuffle = false})[0];
  const auto planes = b.bitplanes(test_atlas());
  EXPECT_EQ(planes.shape(), (gc::nn::Shape{3 * 31, 1, 36, 36}));
  for (std::size_t i = 0; i < b.glyph_ids.size(); ++i) {
    float expected[gc::atlas::kGlyphBytes];
    gc::atlas::write_feature(test_atlas().bitmap(b.glyph_ids[i]), expected);
    EXPECT_TRUE(std::equal(expected, expected + gc::atlas::kGlyphBytes, planes.data() + i * gc::atlas::kGlyphBytes));
    if (b.glyph_ids[i] == gc::atlas::kPadId)
      EXPECT_TRUE(std::all_of(expected, expected + gc::atlas::kGlyphBytes, [](float v) { return v == 0.0f; }));
  }
}

TEST(Batches, Errors) {
  const auto encoded = encode_dataset(make_dataset({3}), test_atlas(), kShaper, 5);
  EXPECT_EQ(kind_of([&] { make_batches(encoded, BatchOptions{.batch_size = 0}); }), gc::ErrorKind::Parameter);
  Dataset empty;
  EXPECT_EQ(kind_of([&] { batch_iter(empty, test_atlas(), kShaper, 5, {}); }), gc::ErrorKind::EmptyDataset);
}

// ---------------------------------------------------------------- synthetic corpora

TEST(SynthLongtail, GeometricCounts) {
  EXPECT_EQ(gc::synth::longtail_counts(5, 1000, 10), (std::vector<std::size_t>{1000, 316, 100, 32, 10}));
  const auto ds = gc::synth::synth_longtail(5, 1000, 10, 5, 3);
  EXPECT_EQ(ds.num_classes(), 5u);
  EXPECT_EQ(class_counts(ds).counts, (std::vector<std::uint64_t>{1000, 316, 100, 32, 10}));
  for (const auto& r : ds.records) {
    EXPECT_GE(r.label, 0);
    EXPECT_LT(r.label, 5);
  }
  EXPECT_EQ(ds.labels.name(4), "class4");
}

TEST(SynthLongtail, Deterministic) {
  const auto a = gc::synth::synth_longtail(4, 50, 5, 3, 17), b = gc::synth::synth_longtail(4, 50, 5, 3, 17);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.records[i].text, b.records[i].text);
  const auto c = gc::synth::synth_longtail(4, 50, 5, 3, 18);
  EXPECT_NE(as_set(a), as_set(c));
}

TEST(SynthLongtail, TextsEncodeWithoutFallback) {
  const auto ds = gc::synth::synth_longtail(3, 40, 4, 5, 1);
  for (const auto& r : ds.records) {
    const auto doc = encode_document(r.text, test_atlas(), kShaper, std::nullopt);
    EXPECT_TRUE(std::none_of(doc.glyph_ids.begin(), doc.glyph_ids.end(),
                             [](auto id) { return id == gc::atlas::kFallbackId; }))
        << r.text;
  }
}

TEST(SynthLongtail, Errors) {
  EXPECT_EQ(kind_of([] { gc::synth::synth_longtail(3, 5, 10, 2, 0); }), gc::ErrorKind::Parameter);
  EXPECT_EQ(kind_of([] { gc::synth::synth_longtail(3, 5, 1, 2, 0); }), gc::ErrorKind::Parameter);
  EXPECT_EQ(kind_of([] { gc::synth::synth_longtail(0, 5, 2, 2, 0); }), gc::ErrorKind::Parameter);
}
