#include "glyphclass/training.hpp"

#include <fcntl.h>
#include <unistd.h>
#if defined(__SSE2__)
#include <xmmintrin.h>
#endif

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>

#include "glyphclass/balanced_loss.hpp"
#include "glyphclass/checkpoint.hpp"
#include "glyphclass/error.hpp"

namespace glyphclass::train {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) fail(ErrorKind::Parameter, message);
}

// Exclusive ownership of a checkpoint directory for one training process.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir) : path_(dir / "LOCK") {
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      fail(ErrorKind::Lock, "checkpoint directory " + dir.string() + " is locked by another run (remove " +
                                path_.string() + " if that run is gone)");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
};

// Subnormal floats from dying ReLU units slow every later product severalfold;
// flush them to zero while a model runs and restore the caller's mode after.
class FlushDenormals {
 public:
#if defined(__SSE2__)
  FlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040); }
  ~FlushDenormals() { _mm_setcsr(saved_); }

 private:
  unsigned saved_;
#endif
};

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

void TrainConfig::validate() const {
  require(batch_size > 0, "batch-size must be positive");
  require(std::isfinite(lr) && lr > 0.0, "lr must be positive");
  if (beta) require(*beta >= 0.0 && *beta < 1.0, "beta must lie in [0,1) or be off, got " + format_double(*beta));
  require(wildcard_ratio >= 0.0 && wildcard_ratio < 1.0, "wildcard-ratio must lie in [0,1)");
  require(eval_every > 0, "eval-every must be positive");
  require(threads > 0, "threads must be positive");
  require(test_fraction > 0.0 && test_fraction < 1.0, "test-fraction must lie in (0,1)");
  require(val_fraction >= 0.0 && val_fraction < 1.0, "val-fraction must lie in [0,1)");
  if (max_len) require(*max_len > 0, "max-len must be positive");
  model_config(2).validate();
}

model::ModelConfig TrainConfig::model_config(std::size_t num_classes) const {
  model::ModelConfig m;
  m.classifier = classifier;
  m.num_classes = num_classes;
  m.max_len = max_len;
  m.wildcard_ratio = wildcard_ratio;
  m.gru_hidden = gru_hidden;
  m.gru_layers = gru_layers;
  m.pooling = pooling;
  return m;
}

std::string EpochRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["loss"] = loss;
  if (train_accuracy) j["train_accuracy"] = *train_accuracy;
  if (heldout) {
    j[heldout_name + "_micro_f"] = heldout->micro_f;
    j[heldout_name + "_macro_f"] = heldout->macro_f;
  }
  return j.dump();
}

Splits make_splits(const data::Dataset& ds, const TrainConfig& config) {
  const auto split = [&](const data::Dataset& d, double fraction, std::uint64_t seed) {
    return config.stratified ? data::split_stratified(d, fraction, seed) : data::split_random(d, fraction, seed);
  };
  auto outer = split(ds, config.test_fraction, config.seed);
  Splits s;
  s.test = std::move(outer.test);
  if (config.val_fraction > 0.0) {
    auto inner = split(outer.train, config.val_fraction, config.seed + 1);
    s.train = std::move(inner.train);
    s.heldout = std::move(inner.test);
  } else {
    s.train = std::move(outer.train);
    s.heldout = s.test;
  }
  return s;
}

namespace {

data::BatchOptions eval_batches(const model::Network& net, std::size_t batch_size) {
  data::BatchOptions o;
  o.batch_size = batch_size;
  o.shuffle = false;
  o.bucket_by_length = net.config().classifier == model::Classifier::Bigru;
  return o;
}

int argmax_row(const nn::Tensor& logits, std::size_t row) {
  const std::size_t c = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k)
    if (logits[row * c + k] > logits[row * c + best]) best = k;
  return static_cast<int>(best);
}

// Eval-mode predictions paired with their true labels (batch order).
std::pair<std::vector<int>, std::vector<int>> predict_with_labels(const model::Network& net,
                                                                  const model::ModelParams& params,
                                                                  const data::EncodedDataset& encoded,
                                                                  std::size_t batch_size,
                                                                  const atlas::GlyphAtlas& atlas) {
  std::vector<int> preds, labels;
  for (const auto& batch : data::make_batches(encoded, eval_batches(net, batch_size))) {
    const nn::Tensor logits = net.infer(params, model::make_char_input(batch, atlas));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      preds.push_back(argmax_row(logits, b));
      labels.push_back(batch.labels[b]);
    }
  }
  return {preds, labels};
}

eval::Metrics score(const model::Network& net, const model::ModelParams& params, const data::EncodedDataset& encoded,
                    const data::LabelMap& labels, std::size_t batch_size, const atlas::GlyphAtlas& atlas) {
  const FlushDenormals flush;
  const auto [preds, truth] = predict_with_labels(net, params, encoded, batch_size, atlas);
  return eval::f_scores(eval::confusion(preds, truth, labels.size()), labels.names());
}

struct Prepared {
  data::Dataset dataset;
  atlas::GlyphAtlas atlas;
  Splits splits;
  data::EncodedDataset train, heldout;
};

Prepared prepare(const TrainConfig& c) {
  Prepared p{data::load_dataset(c.dataset), atlas::GlyphAtlas::load(c.atlas), {}, {}, {}};
  p.splits = make_splits(p.dataset, c);
  const shaping::Shaper shaper(shaping::JoiningTable::builtin(), c.shaping);
  p.train = data::encode_dataset(p.splits.train, p.atlas, shaper, c.max_len, c.threads);
  p.heldout = data::encode_dataset(p.splits.heldout, p.atlas, shaper, c.max_len, c.threads);
  return p;
}

TrainResult train_loop(TrainState state, const Prepared& prep, const TrainHooks& hooks) {
  const FlushDenormals flush;
  const TrainConfig& c = state.config;
  std::filesystem::create_directories(c.checkpoint_dir);
  DirLock lock(c.checkpoint_dir);

  const model::Network net(c.model_config(state.labels.size()));
  const loss::ClassStats stats = data::class_counts(prep.splits.train);
  const loss::ClassWeights weights =
      c.beta ? loss::cb_weights(stats, *c.beta, c.normalize_weights) : loss::uniform_weights(stats.num_classes());
  const nn::Tensor weight_tensor = weights.tensor();
  const nn::AdamOptions adam{.lr = static_cast<float>(c.lr)};
  const std::string heldout_name = c.val_fraction > 0.0 ? "val" : "test";

  TrainResult result;
  std::ofstream log(c.checkpoint_dir / "train_log.jsonl", std::ios::app);
  if (!log) fail(ErrorKind::Io, "cannot append to " + (c.checkpoint_dir / "train_log.jsonl").string());

  const auto checkpoint = [&](bool final) {
    const auto latest = c.checkpoint_dir / "latest.ardc";
    ckpt::save(state, latest);
    if (c.keep_checkpoints && !final) {
      std::filesystem::copy_file(latest, c.checkpoint_dir / ("epoch-" + std::to_string(state.epoch) + ".ardc"),
                                 std::filesystem::copy_options::overwrite_existing);
    }
    result.checkpoint = latest;
  };

  if (state.epoch == 0) checkpoint(false);

  bool fitted = false;
  while (state.epoch < c.epochs && !fitted) {
    data::BatchOptions bo;
    bo.batch_size = c.batch_size;
    bo.seed = c.seed;
    bo.epoch = state.epoch;
    bo.bucket_by_length = c.classifier == model::Classifier::Bigru;
    // Batch norm needs at least two rows to estimate a variance.
    bo.min_batch = c.classifier == model::Classifier::Bigru ? 2 : 1;
    const auto batches = data::make_batches(prep.train, bo);

    double loss_sum = 0.0;
    std::size_t rows = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const auto& batch = batches[bi];
      const auto input = model::make_char_input(batch, prep.atlas);
      model::Trace trace;
      const nn::Tensor logits = net.forward(state.params, input, nn::Mode::Train, &state.rng, &trace);
      const nn::LossResult loss = nn::weighted_softmax_ce(logits, batch.labels, weight_tensor);
      const auto where = " at epoch " + std::to_string(state.epoch + 1) + ", batch " + std::to_string(bi + 1);
      if (!std::isfinite(loss.loss)) fail(ErrorKind::Divergence, "non-finite loss" + where);
      const nn::TensorMap grads = net.backward(state.params, trace, loss.grad);
      try {
        nn::adam_step(state.params.weights, grads, state.adam, adam);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::Divergence) fail(ErrorKind::Divergence, e.what() + where);
        throw;
      }
      loss_sum += loss.loss * static_cast<double>(batch.size());
      rows += batch.size();
    }
    ++state.epoch;

    EpochRecord rec;
    rec.epoch = state.epoch;
    rec.loss = loss_sum / static_cast<double>(rows);
    const bool eval_epoch = state.epoch % c.eval_every == 0 || state.epoch == c.epochs;
    if (eval_epoch) {
      if (c.stop_when_fit) {
        const auto [preds, truth] = predict_with_labels(net, state.params, prep.train, c.batch_size, prep.atlas);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == truth[i];
        rec.train_accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
        fitted = hits == preds.size();
      }
      rec.heldout = score(net, state.params, prep.heldout, state.labels, c.batch_size, prep.atlas);
      rec.heldout_name = heldout_name;
      result.final_metrics = rec.heldout;
    }
    const std::string line = rec.to_json();
    log << line << '\n' << std::flush;
    if (hooks.on_epoch) hooks.on_epoch(rec);
    result.log.push_back(std::move(rec));
    if (eval_epoch || fitted) checkpoint(state.epoch == c.epochs || fitted);
  }
  if (!result.log.empty() && !result.log.back().heldout) {
    result.final_metrics = score(net, state.params, prep.heldout, state.labels, c.batch_size, prep.atlas);
    checkpoint(true);
  }
  result.state = std::move(state);
  return result;
}

}  // namespace

std::vector<int> predict_labels(const model::Network& net, const model::ModelParams& params,
                                const data::EncodedDataset& encoded, std::size_t batch_size,
                                const atlas::GlyphAtlas& atlas) {
  data::BatchOptions o;
  o.batch_size = batch_size;
  o.shuffle = false;
  std::vector<int> preds;
  for (const auto& batch : data::make_batches(encoded, o)) {
    const nn::Tensor logits = net.infer(params, model::make_char_input(batch, atlas));
    for (std::size_t b = 0; b < batch.size(); ++b) preds.push_back(argmax_row(logits, b));
  }
  return preds;
}

eval::Metrics evaluate(const model::Network& net, const model::ModelParams& params,
                       const data::EncodedDataset& encoded, const data::LabelMap& labels, std::size_t batch_size,
                       const atlas::GlyphAtlas& atlas) {
  return score(net, params, encoded, labels, batch_size, atlas);
}

TrainResult run_train(const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const Prepared prep = prepare(config);
  TrainState state;
  state.config = config;
  state.labels = prep.dataset.labels;
  state.params = model::init_params(config.model_config(state.labels.size()), config.seed);
  state.rng.seed(config.seed ^ 0x9e3779b97f4a7c15ULL);
  return train_loop(std::move(state), prep, hooks);
}

TrainResult resume_train(const std::filesystem::path& checkpoint, std::optional<std::size_t> epochs,
                         const TrainHooks& hooks) {
  TrainState state = ckpt::load(checkpoint);
  if (epochs) state.config.epochs = *epochs;
  state.config.validate();
  const Prepared prep = prepare(state.config);
  if (!(prep.dataset.labels == state.labels))
    fail(ErrorKind::Compatibility, "dataset labels differ from the checkpoint's label map");
  return train_loop(std::move(state), prep, hooks);
}

eval::Metrics run_eval(const std::filesystem::path& checkpoint, const std::optional<std::filesystem::path>& dataset,
                       const std::optional<std::filesystem::path>& atlas_path) {
  const TrainState state = ckpt::load(checkpoint);
  TrainConfig c = state.config;
  if (dataset) c.dataset = *dataset;
  if (atlas_path) c.atlas = *atlas_path;
  const data::Dataset ds = data::load_dataset(c.dataset);
  if (!(ds.labels == state.labels))
    fail(ErrorKind::Compatibility, "dataset labels differ from the checkpoint's label map");
  const atlas::GlyphAtlas atlas = atlas::GlyphAtlas::load(c.atlas);
  const Splits splits = make_splits(ds, c);
  const shaping::Shaper shaper(shaping::JoiningTable::builtin(), c.shaping);
  const auto encoded = data::encode_dataset(splits.test, atlas, shaper, c.max_len, c.threads);
  const model::Network net(c.model_config(state.labels.size()));
  return score(net, state.params, encoded, state.labels, c.batch_size, atlas);
}

Predictor::Predictor(const std::filesystem::path& checkpoint, const std::optional<std::filesystem::path>& atlas)
    : Predictor(ckpt::load(checkpoint), atlas::GlyphAtlas{}) {
  atlas_ = atlas::GlyphAtlas::load(atlas.value_or(state_.config.atlas));
}

Predictor::Predictor(TrainState state, atlas::GlyphAtlas atlas)
    : state_(std::move(state)),
      atlas_(std::move(atlas)),
      net_(state_.config.model_config(state_.labels.size())),
      shaper_(shaping::JoiningTable::builtin(), state_.config.shaping) {}

Prediction Predictor::operator()(std::string_view text) const {
  const FlushDenormals flush;
  const data::EncodedDoc doc = data::encode_document(text, atlas_, shaper_, state_.config.max_len);
  data::Batch batch;
  batch.glyph_ids = doc.glyph_ids;
  batch.lengths = {doc.true_len};
  batch.labels = {0};
  batch.length = doc.glyph_ids.size();
  const nn::Tensor probs = nn::softmax(net_.infer(state_.params, model::make_char_input(batch, atlas_)));
  Prediction p;
  p.label_id = argmax_row(probs, 0);
  p.label = state_.labels.name(p.label_id);
  for (float v : probs.values()) p.probabilities.push_back(v);
  return p;
}

}  // namespace glyphclass::train
