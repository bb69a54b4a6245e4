#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "glyphclass/adam.hpp"
#include "glyphclass/arabic_shaping.hpp"
#include "glyphclass/data.hpp"
#include "glyphclass/metrics.hpp"
#include "glyphclass/models.hpp"

namespace glyphclass::train {

struct TrainConfig {
  std::filesystem::path dataset;
  std::filesystem::path atlas;
  model::Classifier classifier = model::Classifier::Bigru;
  /// nullopt: whole documents up to the safety cap (BiGRU only).
  std::optional<std::size_t> max_len;
  std::size_t batch_size = 64;
  double lr = 0.001;
  /// nullopt disables class balancing (uniform weights).
  std::optional<double> beta = 0.99;
  double wildcard_ratio = 0.1;
  std::size_t epochs = 150;
  std::uint64_t seed = 0;
  std::filesystem::path checkpoint_dir = "checkpoints";
  std::size_t eval_every = 10;
  unsigned threads = 1;
  double test_fraction = 0.2;
  /// Portion of the training split held out for tuning; 0 disables it.
  double val_fraction = 0.0;
  bool stratified = true;
  bool normalize_weights = true;
  model::SentencePooling pooling = model::SentencePooling::TopLayer;
  std::size_t gru_hidden = 128;
  std::size_t gru_layers = 3;
  shaping::ShapingOptions shaping;
  /// Measure training accuracy on eval epochs and stop once it reaches 100%.
  bool stop_when_fit = false;
  /// Keep one checkpoint file per eval epoch besides latest.ardc.
  bool keep_checkpoints = false;

  /// Throws Error{Parameter} naming the offending field.
  void validate() const;
  model::ModelConfig model_config(std::size_t num_classes) const;
};

/// Everything needed to continue training bit-for-bit.
struct TrainState {
  TrainConfig config;
  data::LabelMap labels;
  model::ModelParams params;
  nn::AdamState adam;
  std::uint64_t epoch = 0;
  std::mt19937_64 rng;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  double loss = 0.0;
  std::optional<double> train_accuracy;
  std::optional<eval::Metrics> heldout;
  /// "test" or "val".
  std::string heldout_name;

  std::string to_json() const;
};

struct TrainResult {
  std::filesystem::path checkpoint;
  std::vector<EpochRecord> log;
  std::optional<eval::Metrics> final_metrics;
  TrainState state;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Creates a fresh state (or continues `resume`) and trains up to
/// config.epochs, appending one JSON line per epoch to
/// <checkpoint_dir>/train_log.jsonl and checkpointing at eval epochs and at
/// the end. Throws Error{Divergence} on a non-finite loss or gradient and
/// Error{Lock} when another run owns the directory.
TrainResult run_train(const TrainConfig& config, const TrainHooks& hooks = {});
TrainResult resume_train(const std::filesystem::path& checkpoint, std::optional<std::size_t> epochs,
                         const TrainHooks& hooks = {});

/// Split used for training and evaluation, reproduced from the seed.
struct Splits {
  data::Dataset train;
  data::Dataset heldout;  // validation when val_fraction > 0, else test
  data::Dataset test;
};
Splits make_splits(const data::Dataset& ds, const TrainConfig& config);

/// Predicted labels of every record, in dataset order.
std::vector<int> predict_labels(const model::Network& net, const model::ModelParams& params,
                                const data::EncodedDataset& encoded, std::size_t batch_size,
                                const atlas::GlyphAtlas& atlas);

eval::Metrics evaluate(const model::Network& net, const model::ModelParams& params,
                       const data::EncodedDataset& encoded, const data::LabelMap& labels, std::size_t batch_size,
                       const atlas::GlyphAtlas& atlas);

/// Re-creates the split stored in the checkpoint and scores the test part.
/// `dataset` overrides the stored path. Throws Error{Compatibility} when the
/// dataset's labels differ from the checkpoint's.
eval::Metrics run_eval(const std::filesystem::path& checkpoint,
                       const std::optional<std::filesystem::path>& dataset = std::nullopt,
                       const std::optional<std::filesystem::path>& atlas = std::nullopt);

struct Prediction {
  std::string label;
  int label_id = 0;
  std::vector<double> probabilities;
};

class Predictor {
 public:
  explicit Predictor(const std::filesystem::path& checkpoint,
                     const std::optional<std::filesystem::path>& atlas = std::nullopt);
  Predictor(TrainState state, atlas::GlyphAtlas atlas);

  /// Throws Error{EmptyDocument} for text that normalizes to nothing.
  Prediction operator()(std::string_view text) const;

  const TrainState& state() const { return state_; }

 private:
  TrainState state_;
  atlas::GlyphAtlas atlas_;
  model::Network net_;
  shaping::Shaper shaper_;
};

}  // namespace glyphclass::train
