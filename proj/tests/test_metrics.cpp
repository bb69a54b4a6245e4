#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "glyphclass/error.hpp"
#include "glyphclass/metrics.hpp"
#include "glyphclass/synth.hpp"
#include "expect_error.hpp"
#include "support.hpp"

namespace gc = glyphclass;
using namespace gc::eval;
using testing_support::kind_of;

namespace {

struct OracleScores {
  std::vector<double> p, r, f;
  double micro = 0, macro = 0;
};

// Counts straight from the label lists, never through a matrix.
OracleScores brute_force(const std::vector<int>& pred, const std::vector<int>& truth, int classes) {
  OracleScores o;
  std::size_t correct = 0;
  for (int k = 0; k < classes; ++k) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == k && truth[i] == k) ++tp;
      if (pred[i] == k && truth[i] != k) ++fp;
      if (pred[i] != k && truth[i] == k) ++fn;
    }
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    o.p.push_back(p);
    o.r.push_back(r);
    o.f.push_back(p + r > 0 ? 2 * p * r / (p + r) : 0.0);
    o.macro += o.f.back() / classes;
  }
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == truth[i];
  o.micro = double(correct) / double(pred.size());
  return o;
}

gc::data::Dataset labelled(const std::vector<int>& labels, std::size_t classes) {
  gc::data::Dataset ds;
  for (std::size_t c = 0; c < classes; ++c) ds.labels.intern("c" + std::to_string(c));
  for (int l : labels) ds.records.push_back({l, "x"});
  return ds;
}

}  // namespace

TEST(Confusion, Examples) {
  const auto perfect = confusion({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  EXPECT_EQ(perfect.at(1, 1), 2u);
  EXPECT_EQ(perfect.at(0, 0) + perfect.at(2, 2), 2u);
  EXPECT_EQ(perfect.total(), 4u);

  const auto col0 = confusion({0, 0, 0}, {0, 1, 2}, 3);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t p = 1; p < 3; ++p) EXPECT_EQ(col0.at(t, p), 0u);

  EXPECT_EQ(confusion({}, {}, 4).total(), 0u);
  EXPECT_EQ(kind_of([] { confusion({0}, {0, 1}, 2); }), gc::ErrorKind::Input);
  EXPECT_EQ(kind_of([] { confusion({2}, {0}, 2); }), gc::ErrorKind::Input);
  EXPECT_EQ(kind_of([] { confusion({0}, {-1}, 2); }), gc::ErrorKind::Input);
}

TEST(Confusion, MergingEqualsPooling) {
  Confusion a = confusion({0, 1}, {1, 1}, 2);
  a += confusion({0}, {0}, 2);
  EXPECT_EQ(a, confusion({0, 1, 0}, {1, 1, 0}, 2));
  EXPECT_EQ(kind_of([&] { a += Confusion(3); }), gc::ErrorKind::Input);
}

TEST(FScores, PerfectAndMajorityExamples) {
  const auto m = f_scores(confusion({0, 1, 2}, {0, 1, 2}, 3));
  EXPECT_EQ(m.micro_f, 1.0);
  EXPECT_EQ(m.macro_f, 1.0);

  std::vector<int> truth(70, 0);
  truth.resize(100, 1);
  const auto maj = f_scores(confusion(std::vector<int>(100, 0), truth, 2));
  EXPECT_DOUBLE_EQ(maj.micro_f, 0.7);
  EXPECT_NEAR(maj.macro_f, 0.5 * (2 * 0.7 / 1.7), 1e-15);
  EXPECT_NEAR(maj.macro_f, 0.4118, 5e-5);
  EXPECT_EQ(maj.per_class[1].precision, 0.0);
  EXPECT_EQ(maj.per_class[1].f1, 0.0);
  EXPECT_EQ(maj.per_class[0].support, 70u);
}

TEST(FScores, EmptyMatrixIsAnError) { EXPECT_EQ(kind_of([] { f_scores(Confusion(3)); }), gc::ErrorKind::Input); }

TEST(FScores, ZeroSupportClassCountsInMacro) {
  const auto m = f_scores(confusion({0, 1}, {0, 1}, 4), {"a", "b", "c", "d"});
  EXPECT_EQ(m.macro_f, 0.5);
  EXPECT_EQ(m.per_class[3].label, "d");
}

TEST(FScores, MatchesBruteForceOracle) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng() % 9);
    const std::size_t n = 1 + rng() % 400;
    std::vector<int> pred(n), truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<int>(rng() % classes);
      pred[i] = rng() % 3 == 0 ? truth[i] : static_cast<int>(rng() % classes);
    }
    const auto m = f_scores(confusion(pred, truth, classes));
    const auto o = brute_force(pred, truth, classes);
    for (int k = 0; k < classes; ++k) {
      EXPECT_NEAR(m.per_class[k].precision, o.p[k], 1e-12);
      EXPECT_NEAR(m.per_class[k].recall, o.r[k], 1e-12);
      EXPECT_NEAR(m.per_class[k].f1, o.f[k], 1e-12);
    }
    EXPECT_NEAR(m.micro_f, o.micro, 1e-12);
    EXPECT_NEAR(m.macro_f, o.macro, 1e-12);
    EXPECT_GE(m.macro_f, 0.0);
    EXPECT_LE(m.macro_f, 1.0);
  }
}

TEST(FScores, MacroIsInvariantUnderRelabeling) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 3 + static_cast<int>(rng() % 5);
    std::vector<int> perm(classes);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> pred(200), truth(200), pp(200), pt(200);
    for (std::size_t i = 0; i < 200; ++i) {
      truth[i] = static_cast<int>(rng() % classes);
      pred[i] = static_cast<int>(rng() % classes);
      pt[i] = perm[truth[i]];
      pp[i] = perm[pred[i]];
    }
    const auto a = f_scores(confusion(pred, truth, classes));
    const auto b = f_scores(confusion(pp, pt, classes));
    EXPECT_NEAR(a.macro_f, b.macro_f, 1e-12);
    EXPECT_EQ(a.micro_f, b.micro_f);
    for (int k = 0; k < classes; ++k) EXPECT_EQ(a.per_class[k].f1, b.per_class[perm[k]].f1);
  }
}

TEST(Majority, Examples) {
  EXPECT_EQ(majority_baseline(labelled({0, 0, 1}, 2), labelled({0, 1}, 2)).micro_f, 0.5);
  const auto single = majority_baseline(labelled({0, 0}, 1), labelled({0, 0, 0}, 1));
  EXPECT_EQ(single.micro_f, 1.0);
  EXPECT_EQ(single.macro_f, 1.0);
  EXPECT_EQ(majority_label(labelled({3, 2, 1, 2, 3}, 4)), 2);
  EXPECT_EQ(kind_of([] { majority_label(labelled({}, 2)); }), gc::ErrorKind::Input);
}

TEST(Majority, MicroEqualsMajorityShare) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t classes = 2 + rng() % 5;
    std::vector<int> train(50 + rng() % 100), test(20 + rng() % 80);
    for (int& l : train) l = static_cast<int>(rng() % classes);
    for (int& l : test) l = static_cast<int>(rng() % classes);
    const int maj = majority_label(labelled(train, classes));
    const auto share = static_cast<double>(std::count(test.begin(), test.end(), maj)) / test.size();
    EXPECT_EQ(majority_baseline(labelled(train, classes), labelled(test, classes)).micro_f, share);
  }
}

TEST(MetricsJson, FieldOrderAndValues) {
  const auto m = f_scores(confusion({0, 1, 1}, {0, 1, 0}, 2), {"a", "b"});
  const auto text = metrics_json(m);
  EXPECT_EQ(text.rfind("{\"micro_f\":", 0), 0u);
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["macro_f"].get<double>(), m.macro_f);
  EXPECT_EQ(j["per_class"][1]["label"], "b");
  EXPECT_EQ(j["per_class"][1]["support"], 1);
  EXPECT_EQ(j["per_class"][0]["recall"].get<double>(), 0.5);

  testing_support::TempDir dir;
  write_metrics(m, dir.path() / "m.json");
  std::ifstream in(dir.path() / "m.json");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, text);
  EXPECT_EQ(kind_of([&] { write_metrics(m, dir.path() / "missing" / "m.json"); }), gc::ErrorKind::Io);
}

namespace {

std::vector<std::vector<std::string>> read_tsv(const std::filesystem::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, '\t');) fields.push_back(f);
    rows.push_back(std::move(fields));
  }
  return rows;
}

}  // namespace

TEST(ExportEmbeddings, OneLinePerEntry) {
  gc::model::ModelConfig config;
  const auto params = gc::model::init_params(config, 3);
  gc::atlas::GlyphBitmap a, b;
  a.pixels[100] = 255;
  b.pixels[100] = 255;
  gc::atlas::GlyphBitmap c;
  c.pixels[700] = 90;
  const gc::atlas::GlyphAtlas atlas({{gc::atlas::GlyphKey{{0x0628}}, a},
                                     {gc::atlas::GlyphKey{{0x0644, 0x0627}}, b},
                                     {gc::atlas::GlyphKey{{0x0633}}, c}},
                                    gc::atlas::GlyphBitmap{});
  testing_support::TempDir dir;
  EXPECT_EQ(export_embeddings(params, atlas, dir.path() / "e.tsv"), 3u);
  const auto rows = read_tsv(dir.path() / "e.tsv");
  ASSERT_EQ(rows.size(), 3u);
  for (const auto& r : rows) {
    ASSERT_EQ(r.size(), 129u);
    for (std::size_t k = 1; k < r.size(); ++k) EXPECT_NO_THROW(std::stof(r[k]));
  }
  std::map<std::string, std::vector<std::string>> by_key;
  for (const auto& r : rows) by_key[r[0]] = {r.begin() + 1, r.end()};
  ASSERT_EQ(by_key.count("0644+0627"), 1u);
  // Equal up to GEMM rounding, which depends on a row's position in the block.
  float max_diff = 0, max_other = 0;
  for (std::size_t k = 0; k < 128; ++k) {
    const float x = std::stof(by_key.at("0628")[k]);
    max_diff = std::max(max_diff, std::abs(x - std::stof(by_key.at("0644+0627")[k])));
    max_other = std::max(max_other, std::abs(x - std::stof(by_key.at("0633")[k])));
  }
  EXPECT_LT(max_diff, 1e-6f);
  EXPECT_GT(max_other, 1e-4f);
}

TEST(ExportEmbeddings, EmptyAtlasAndErrors) {
  const auto params = gc::model::init_params(gc::model::ModelConfig{}, 3);
  const gc::atlas::GlyphAtlas empty({}, gc::atlas::GlyphBitmap{});
  testing_support::TempDir dir;
  EXPECT_EQ(export_embeddings(params, empty, dir.path() / "e.tsv"), 0u);
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "e.tsv"));
  EXPECT_EQ(std::filesystem::file_size(dir.path() / "e.tsv"), 0u);
  EXPECT_EQ(kind_of([&] { export_embeddings(params, empty, dir.path() / "no" / "e.tsv"); }), gc::ErrorKind::Io);
}

TEST(ExportEmbeddings, MatchesEncoderOnAtlasBitmaps) {
  const auto atlas = gc::synth::synth_atlas(1);
  const auto params = gc::model::init_params(gc::model::ModelConfig{}, 4);
  testing_support::TempDir dir;
  export_embeddings(params, atlas, dir.path() / "e.tsv");
  const auto rows = read_tsv(dir.path() / "e.tsv");
  ASSERT_EQ(rows.size(), atlas.size());
  const auto& key = atlas.keys()[5];
  gc::nn::Tensor plane({1, 1, 36, 36});
  gc::atlas::write_feature(*atlas.find(key), plane.data());
  const auto emb = gc::model::encode_planes(plane, params);
  EXPECT_EQ(rows[5][0], key.to_string());
  for (std::size_t k = 0; k < gc::model::kEmbedDim; ++k) EXPECT_NEAR(std::stof(rows[5][k + 1]), emb[k], 1e-6f * (1 + std::abs(emb[k])));
}
