#include "glyphclass/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "glyphclass/error.hpp"

namespace glyphclass::data {

namespace {

std::mt19937_64 seeded(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

Dataset subset(const Dataset& ds, std::vector<std::size_t> indices) {
  std::sort(indices.begin(), indices.end());
  Dataset out;
  out.labels = ds.labels;
  out.records.reserve(indices.size());
  for (std::size_t i : indices) out.records.push_back(ds.records[i]);
  return out;
}

void check_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    fail(ErrorKind::Parameter, "test fraction must lie in (0,1), got " + std::to_string(fraction));
}

}  // namespace

int LabelMap::intern(const std::string& name) {
  const auto [it, inserted] = ids_.try_emplace(name, static_cast<int>(names_.size()));
  if (inserted) names_.push_back(name);
  return it->second;
}

std::optional<int> LabelMap::find(const std::string& name) const {
  const auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

Dataset parse_dataset(std::string_view contents, LoadReport* report) {
  Dataset ds;
  LoadReport local;
  std::size_t line_no = 0;
  while (!contents.empty()) {
    const auto eol = contents.find('\n');
    std::string_view line = contents.substr(0, eol);
    contents = eol == std::string_view::npos ? std::string_view{} : contents.substr(eol + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos)
      fail(ErrorKind::Parse, "dataset line " + std::to_string(line_no) + ": missing tab between label and text");
    const std::string_view text = line.substr(tab + 1);
    std::u32string normalized;
    try {
      normalized = shaping::normalize_utf8(text);
    } catch (const Error& e) {
      fail(ErrorKind::Decode, "dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    if (normalized.empty()) {
      ++local.dropped_empty;
      continue;
    }
    const int label = ds.labels.intern(std::string(line.substr(0, tab)));
    ds.records.push_back(Record{label, std::string(text)});
  }
  if (ds.records.empty()) fail(ErrorKind::EmptyDataset, "dataset has no usable records");
  if (report) *report = local;
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path, LoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read dataset " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_dataset(buffer.str(), report);
}

void write_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write dataset " + path.string());
  for (const auto& r : ds.records) out << ds.labels.name(r.label) << '\t' << r.text << '\n';
  if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

Split split_stratified(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  check_fraction(test_fraction);
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes());
  for (std::size_t i = 0; i < ds.records.size(); ++i)
    by_class[static_cast<std::size_t>(ds.records[i].label)].push_back(i);

  auto rng = seeded(seed, 0x5eed);
  std::vector<std::size_t> train, test;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.size() < 2)
      fail(ErrorKind::Stratification, "class '" + ds.labels.name(static_cast<int>(c)) + "' has " +
                                          std::to_string(members.size()) + " record(s); stratified split needs 2");
    std::shuffle(members.begin(), members.end(), rng);
    const auto wanted = static_cast<std::size_t>(std::llround(static_cast<double>(members.size()) * test_fraction));
    const std::size_t n_test = std::clamp<std::size_t>(wanted, 1, members.size() - 1);
    test.insert(test.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_test));
    train.insert(train.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test), members.end());
  }
  return Split{subset(ds, std::move(train)), subset(ds, std::move(test))};
}

Split split_random(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  check_fraction(test_fraction);
  if (ds.records.size() < 2) fail(ErrorKind::Stratification, "split needs at least 2 records");
  std::vector<std::size_t> order(ds.records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = seeded(seed, 0x5eed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto wanted = static_cast<std::size_t>(std::llround(static_cast<double>(order.size()) * test_fraction));
  const std::size_t n_test = std::clamp<std::size_t>(wanted, 1, order.size() - 1);
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  return Split{subset(ds, std::move(train)), subset(ds, std::move(test))};
}

loss::ClassStats class_counts(const Dataset& train) {
  if (train.records.empty()) fail(ErrorKind::EmptyDataset, "class counts of an empty training set");
  loss::ClassStats stats{std::vector<std::uint64_t>(train.num_classes(), 0)};
  for (const auto& r : train.records) ++stats.counts[static_cast<std::size_t>(r.label)];
  for (std::size_t c = 0; c < stats.counts.size(); ++c)
    if (stats.counts[c] == 0)
      fail(ErrorKind::MissingClass, "class '" + train.labels.name(static_cast<int>(c)) + "' has no training records");
  return stats;
}

EncodedDoc encode_document(std::string_view text, const atlas::GlyphAtlas& atlas, const shaping::Shaper& shaper,
                           std::optional<std::size_t> max_len) {
  if (max_len && *max_len == 0) fail(ErrorKind::Parameter, "max length must be positive");
  const auto clusters = shaper(text);
  if (clusters.empty()) fail(ErrorKind::EmptyDocument, "document is empty after normalization");
  const std::size_t limit = max_len.value_or(kSafetyCap);
  EncodedDoc doc;
  doc.true_len = std::min(clusters.size(), limit);
  doc.glyph_ids.reserve(max_len.value_or(doc.true_len));
  for (std::size_t i = 0; i < doc.true_len; ++i) doc.glyph_ids.push_back(atlas.lookup_id(clusters[i]));
  if (max_len) doc.glyph_ids.resize(*max_len, atlas::kPadId);
  return doc;
}

EncodedDataset encode_dataset(const Dataset& ds, const atlas::GlyphAtlas& atlas, const shaping::Shaper& shaper,
                              std::optional<std::size_t> max_len, unsigned threads) {
  EncodedDataset out;
  out.docs.resize(ds.records.size());
  out.labels.reserve(ds.records.size());
  for (const auto& r : ds.records) out.labels.push_back(r.label);

  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(ds.records.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < ds.records.size(); ++i)
      out.docs[i] = encode_document(ds.records[i].text, atlas, shaper, max_len);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < ds.records.size(); i += workers)
            out.docs[i] = encode_document(ds.records[i].text, atlas, shaper, max_len);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

nn::Tensor Batch::bitplanes(const atlas::GlyphAtlas& atlas) const {
  nn::Tensor planes({glyph_ids.size(), 1, atlas::kGlyphSize, atlas::kGlyphSize});
  for (std::size_t i = 0; i < glyph_ids.size(); ++i)
    atlas::write_feature(atlas.bitmap(glyph_ids[i]), planes.data() + i * atlas::kGlyphBytes);
  return planes;
}

std::vector<Batch> make_batches(const EncodedDataset& ds, const BatchOptions& options) {
  if (options.batch_size == 0) fail(ErrorKind::Parameter, "batch size must be positive");
  std::vector<std::size_t> order(ds.docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = seeded(options.seed, options.epoch + 1);
  if (options.shuffle) std::shuffle(order.begin(), order.end(), rng);

  if (options.bucket_by_length) {
    const std::size_t pool = options.batch_size * 50;
    for (std::size_t begin = 0; begin < order.size(); begin += pool) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(begin);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + pool));
      std::stable_sort(first, last, [&](std::size_t a, std::size_t b) { return ds.docs[a].true_len < ds.docs[b].true_len; });
    }
  }

  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t begin = 0; begin < order.size(); begin += options.batch_size)
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                        order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), begin + options.batch_size)));
  if (groups.size() > 1 && groups.back().size() < options.min_batch) {
    auto tail = std::move(groups.back());
    groups.pop_back();
    groups.back().insert(groups.back().end(), tail.begin(), tail.end());
  }
  if (options.bucket_by_length && options.shuffle) std::shuffle(groups.begin(), groups.end(), rng);

  std::vector<Batch> batches;
  batches.reserve(groups.size());
  for (const auto& group : groups) {
    Batch b;
    for (std::size_t i : group) b.length = std::max(b.length, ds.docs[i].glyph_ids.size());
    b.glyph_ids.assign(group.size() * b.length, atlas::kPadId);
    for (std::size_t row = 0; row < group.size(); ++row) {
      const auto& doc = ds.docs[group[row]];
      std::copy(doc.glyph_ids.begin(), doc.glyph_ids.end(),
                b.glyph_ids.begin() + static_cast<std::ptrdiff_t>(row * b.length));
      b.lengths.push_back(doc.true_len);
      b.labels.push_back(ds.labels[group[row]]);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::vector<Batch> batch_iter(const Dataset& ds, const atlas::GlyphAtlas& atlas, const shaping::Shaper& shaper,
                              std::optional<std::size_t> max_len, const BatchOptions& options) {
  if (ds.records.empty()) fail(ErrorKind::EmptyDataset, "cannot batch an empty dataset");
  return make_batches(encode_dataset(ds, atlas, shaper, max_len), options);
}

}  // namespace glyphclass::data
