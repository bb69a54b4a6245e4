#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "glyphclass/adam.hpp"
#include "glyphclass/data.hpp"
#include "glyphclass/glyph_atlas.hpp"
#include "glyphclass/ops.hpp"

namespace glyphclass::model {

enum class Classifier { Clcnn, Bigru };

/// How the BiGRU turns per-position states into a sentence vector: mean over
/// time of the top layer, or mean over time and all stacked layers.
enum class SentencePooling { TopLayer, AllLayers };

std::string_view to_string(Classifier c);
Classifier parse_classifier(std::string_view text);
std::string_view to_string(SentencePooling p);
SentencePooling parse_pooling(std::string_view text);

inline constexpr std::size_t kEmbedDim = 128;
inline constexpr std::size_t kEncoderMaps = 32;
inline constexpr std::size_t kEncoderFlat = 800;
inline constexpr std::size_t kClcnnMaps = 512;
inline constexpr std::size_t kClcnnPool = 3;
inline constexpr std::size_t kClcnnAdaptiveLen = 2;
inline constexpr std::size_t kClcnnHidden = 1024;
/// Shortest sequence that survives two width-3 pools and still fills the
/// length-2 adaptive pool.
inline constexpr std::size_t kClcnnMinLength = 18;

struct ModelConfig {
  Classifier classifier = Classifier::Bigru;
  std::size_t num_classes = 2;
  /// Required for CLCNN; nullopt means whole documents (BiGRU only).
  std::optional<std::size_t> max_len;
  double wildcard_ratio = 0.1;
  std::size_t gru_hidden = 128;
  std::size_t gru_layers = 3;
  SentencePooling pooling = SentencePooling::TopLayer;

  /// Throws Error{Parameter} on an inconsistent configuration.
  void validate() const;
};

/// Learned weights plus non-learned state (batch-norm running statistics).
struct ModelParams {
  nn::TensorMap weights;
  nn::TensorMap buffers;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
/// batch-norm scale. Deterministic per seed.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Character images for a batch: distinct planes plus, for every (row,
/// position), the index of its plane.
struct CharInput {
  nn::Tensor planes;                 // [U,1,36,36]
  std::vector<std::uint32_t> index;  // [batch*length]
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::size_t> lengths;
};

/// Deduplicates the batch's glyph ids; padding becomes an all-zero plane.
CharInput make_char_input(const data::Batch& batch, const atlas::GlyphAtlas& atlas);

/// One plane per position, [batch*length,1,36,36].
CharInput char_input_from_planes(nn::Tensor planes, std::size_t batch, std::size_t length,
                                 std::vector<std::size_t> lengths);

/// Character encoder on [N,1,36,36] planes; returns [N,128].
nn::Tensor encode_planes(const nn::Tensor& planes, const ModelParams& params);

/// Character encoder on [B*L,1,36,36] planes; returns [B,L,128].
nn::Tensor encode_chars(const nn::Tensor& planes, const ModelParams& params, std::size_t batch, std::size_t length);

/// Zeroes whole 128-d vectors of [B,L,128] embeddings with probability
/// `ratio` per position and rescales survivors by 1/(1-ratio).
nn::DropoutResult wildcard_dropout(const nn::Tensor& embeddings, double ratio, std::mt19937_64& rng, nn::Mode mode);
nn::Tensor wildcard_backward(const nn::DropoutResult& result, const nn::Tensor& dout);

struct Trace;

/// Encoder plus one classifier head, differentiated end to end.
class Network {
 public:
  explicit Network(ModelConfig config);
  ~Network();

  const ModelConfig& config() const { return config_; }

  /// Train mode draws wildcard masks from `rng` and updates the batch-norm
  /// running statistics in params.buffers. Fills `trace` for backward().
  nn::Tensor forward(ModelParams& params, const CharInput& input, nn::Mode mode, std::mt19937_64* rng,
                     Trace* trace) const;

  /// Eval-mode logits.
  nn::Tensor infer(const ModelParams& params, const CharInput& input) const;

  /// Gradients of every weight given d loss / d logits.
  nn::TensorMap backward(const ModelParams& params, const Trace& trace, const nn::Tensor& dlogits) const;

  /// Layer widths observed in the last forward pass, for shape checks.
  struct Widths {
    std::size_t encoder_flat = 0;
    std::size_t classifier_flat = 0;
  };

 private:
  ModelConfig config_;
};

/// Opaque per-pass caches. Create one per forward/backward pair.
struct Trace {
  Trace();
  ~Trace();
  Trace(Trace&&) noexcept;
  Trace& operator=(Trace&&) noexcept;

  Network::Widths widths;
  struct Impl;
  std::unique_ptr<Impl> impl;
};

}  // namespace glyphclass::model
