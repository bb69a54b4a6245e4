#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "glyphclass/arabic_shaping.hpp"
#include "glyphclass/balanced_loss.hpp"
#include "glyphclass/glyph_atlas.hpp"
#include "glyphclass/tensor.hpp"

namespace glyphclass::data {

/// Bijection between label strings and ids in first-appearance order.
class LabelMap {
 public:
  int intern(const std::string& name);
  std::optional<int> find(const std::string& name) const;
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }

  friend bool operator==(const LabelMap& a, const LabelMap& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

struct Record {
  int label = 0;
  std::string text;
};

struct Dataset {
  std::vector<Record> records;
  LabelMap labels;

  std::size_t num_classes() const { return labels.size(); }
  std::size_t size() const { return records.size(); }
};

struct LoadReport {
  std::size_t dropped_empty = 0;
};

/// `label<TAB>text` per line, UTF-8. Records whose text is empty after
/// normalization are dropped and counted in `report`.
Dataset load_dataset(const std::filesystem::path& path, LoadReport* report = nullptr);
Dataset parse_dataset(std::string_view contents, LoadReport* report = nullptr);
void write_dataset(const Dataset& ds, const std::filesystem::path& path);

struct Split {
  Dataset train;
  Dataset test;
};

/// Per-class seeded shuffle; each class contributes round(n*fraction)
/// records to test, clamped so both sides keep at least one. Both halves
/// keep the original record order and the full label map.
Split split_stratified(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// Plain seeded shuffle split without per-class balancing.
Split split_random(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// Histogram of training labels over the full label map. Throws
/// Error{MissingClass} when a class has no records.
loss::ClassStats class_counts(const Dataset& train);

/// Characters beyond this are dropped when no max length is configured.
inline constexpr std::size_t kSafetyCap = 4096;

/// Glyph ids per shaped cluster; entries past true_len are padding.
struct EncodedDoc {
  std::vector<atlas::GlyphId> glyph_ids;
  std::size_t true_len = 0;
};

/// normalize -> cluster -> shape -> atlas lookup, truncated to max_len (or
/// the safety cap) and padded to max_len when one is given.
EncodedDoc encode_document(std::string_view text, const atlas::GlyphAtlas& atlas, const shaping::Shaper& shaper,
                           std::optional<std::size_t> max_len);

struct EncodedDataset {
  std::vector<EncodedDoc> docs;
  std::vector<int> labels;
};

/// Encodes every record, using up to `threads` workers.
EncodedDataset encode_dataset(const Dataset& ds, const atlas::GlyphAtlas& atlas, const shaping::Shaper& shaper,
                              std::optional<std::size_t> max_len, unsigned threads = 1);

/// Padded glyph-id matrix for one mini-batch.
struct Batch {
  std::vector<atlas::GlyphId> glyph_ids;  // [size * length], row-major
  std::vector<std::size_t> lengths;
  std::vector<int> labels;
  std::size_t length = 0;

  std::size_t size() const { return lengths.size(); }

  /// Feature planes [size*length, 1, 36, 36]; padding maps to zero planes.
  nn::Tensor bitplanes(const atlas::GlyphAtlas& atlas) const;
};

struct BatchOptions {
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  /// Group documents of similar length and pad each batch to its longest.
  bool bucket_by_length = false;
  /// A trailing batch smaller than this is merged into its predecessor.
  std::size_t min_batch = 1;
  /// Keep the dataset order (evaluation).
  bool shuffle = true;
};

/// Splits the dataset into batches; the order is a pure function of
/// (seed, epoch). Fixed-length documents are padded to their encoded length.
std::vector<Batch> make_batches(const EncodedDataset& ds, const BatchOptions& options);

/// Convenience wrapper that encodes then batches.
std::vector<Batch> batch_iter(const Dataset& ds, const atlas::GlyphAtlas& atlas, const shaping::Shaper& shaper,
                              std::optional<std::size_t> max_len, const BatchOptions& options);

}  // namespace glyphclass::data
