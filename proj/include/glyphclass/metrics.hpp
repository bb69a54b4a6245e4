#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glyphclass/data.hpp"
#include "glyphclass/glyph_atlas.hpp"
#include "glyphclass/models.hpp"

namespace glyphclass::eval {

/// Counts indexed [true][predicted].
class Confusion {
 public:
  explicit Confusion(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::uint64_t total() const;

  /// Throws Error{Input} when a value falls outside [0, classes).
  void add(int truth, int predicted);
  Confusion& operator+=(const Confusion& other);

  friend bool operator==(const Confusion&, const Confusion&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Throws Error{Input} on a length mismatch or out-of-range value.
Confusion confusion(const std::vector<int>& predictions, const std::vector<int>& labels, std::size_t classes);

struct ClassScore {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
};

struct Metrics {
  std::vector<ClassScore> per_class;
  double micro_f = 0.0;
  double macro_f = 0.0;
};

/// Per-class precision/recall/F1 with 0/0 taken as 0; macro F averages over
/// every class, micro F uses pooled counts. Throws Error{Input} on an empty
/// matrix.
Metrics f_scores(const Confusion& cm, const std::vector<std::string>& label_names = {});

/// Most frequent training label (ties to the lowest id), predicted for every
/// test record.
int majority_label(const data::Dataset& train);
Metrics majority_baseline(const data::Dataset& train, const data::Dataset& test);

/// {"micro_f":..,"macro_f":..,"per_class":[{"label","precision","recall","f1","support"}]}
std::string metrics_json(const Metrics& m);
void write_metrics(const Metrics& m, const std::filesystem::path& path);

/// One line per atlas entry: key, TAB, 128 TAB-separated floats. Returns the
/// number of lines.
std::size_t export_embeddings(const model::ModelParams& params, const atlas::GlyphAtlas& atlas,
                              const std::filesystem::path& path);

}  // namespace glyphclass::eval
