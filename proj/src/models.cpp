#include "glyphclass/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "glyphclass/error.hpp"

namespace glyphclass::model {

using nn::Mode;
using nn::Shape;
using nn::Padding;
using nn::Pooled;
using nn::Tensor;

namespace {

constexpr std::size_t kEncoderChunk = 128;
constexpr std::size_t kGlyphPixels = atlas::kGlyphBytes;

const Tensor& param(const ModelParams& p, const std::string& name) {
  const auto it = p.weights.find(name);
  if (it == p.weights.end()) fail(ErrorKind::Parameter, "missing model parameter '" + name + "'");
  return it->second;
}

void accumulate(nn::TensorMap& grads, const std::string& name, Tensor&& g) {
  auto [it, inserted] = grads.try_emplace(name, std::move(g));
  if (!inserted) it->second += g;
}

std::string gru_name(std::size_t layer, bool backward_dir, const char* what) {
  return "bigru.l" + std::to_string(layer) + (backward_dir ? ".bwd." : ".fwd.") + what;
}

// ---------------------------------------------------------------- encoder

struct EncoderChunk {
  Tensor x;
  Tensor a1;
  Pooled p1;
  Tensor a2;
  Pooled p2;
  Tensor a3;
  Tensor flat;
  Tensor f1;
  Tensor emb;
};

Tensor encoder_forward(const Tensor& x, const ModelParams& p, EncoderChunk& c) {
  c.x = x;
  c.a1 = nn::relu(nn::conv2d(x, param(p, "encoder.conv1.weight"), param(p, "encoder.conv1.bias")));
  c.p1 = nn::maxpool(c.a1, 2, 2);
  c.a2 = nn::relu(nn::conv2d(c.p1.out, param(p, "encoder.conv2.weight"), param(p, "encoder.conv2.bias")));
  c.p2 = nn::maxpool(c.a2, 2, 2);
  c.a3 = nn::relu(nn::conv2d(c.p2.out, param(p, "encoder.conv3.weight"), param(p, "encoder.conv3.bias")));
  const std::size_t n = x.dim(0);
  c.flat = c.a3.reshaped({n, c.a3.size() / n});
  c.f1 = nn::relu(nn::linear(c.flat, param(p, "encoder.fc1.weight"), param(p, "encoder.fc1.bias")));
  c.emb = nn::relu(nn::linear(c.f1, param(p, "encoder.fc2.weight"), param(p, "encoder.fc2.bias")));
  return c.emb;
}

void encoder_backward(const EncoderChunk& c, const ModelParams& p, const Tensor& demb, nn::TensorMap& grads) {
  auto fc2 = nn::linear_backward(c.f1, param(p, "encoder.fc2.weight"), nn::relu_backward(c.emb, demb));
  accumulate(grads, "encoder.fc2.weight", std::move(fc2.dw));
  accumulate(grads, "encoder.fc2.bias", std::move(fc2.db));
  auto fc1 = nn::linear_backward(c.flat, param(p, "encoder.fc1.weight"), nn::relu_backward(c.f1, fc2.dx));
  accumulate(grads, "encoder.fc1.weight", std::move(fc1.dw));
  accumulate(grads, "encoder.fc1.bias", std::move(fc1.db));
  auto conv3 = nn::conv2d_backward(c.p2.out, param(p, "encoder.conv3.weight"),
                                   nn::relu_backward(c.a3, std::move(fc1.dx).reshaped(c.a3.shape())));
  accumulate(grads, "encoder.conv3.weight", std::move(conv3.dw));
  accumulate(grads, "encoder.conv3.bias", std::move(conv3.db));
  auto conv2 = nn::conv2d_backward(c.p1.out, param(p, "encoder.conv2.weight"),
                                   nn::relu_backward(c.a2, nn::pool_backward(c.p2, conv3.dx)));
  accumulate(grads, "encoder.conv2.weight", std::move(conv2.dw));
  accumulate(grads, "encoder.conv2.bias", std::move(conv2.db));
  auto conv1 = nn::conv2d_backward(c.x, param(p, "encoder.conv1.weight"),
                                   nn::relu_backward(c.a1, nn::pool_backward(c.p1, conv2.dx)));
  accumulate(grads, "encoder.conv1.weight", std::move(conv1.dw));
  accumulate(grads, "encoder.conv1.bias", std::move(conv1.db));
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t count) {
  Shape shape = t.shape();
  const std::size_t row = t.size() / shape[0];
  shape[0] = count;
  std::vector<float> data(t.data() + begin * row, t.data() + (begin + count) * row);
  return Tensor(std::move(shape), std::move(data));
}

void check_planes(const Tensor& planes) {
  if (planes.rank() != 4 || planes.dim(1) != 1 || planes.dim(2) != atlas::kGlyphSize ||
      planes.dim(3) != atlas::kGlyphSize)
    fail(ErrorKind::Dimension, "character encoder expects [N,1,36,36] planes, got " + nn::shape_string(planes.shape()));
}

}  // namespace

// ---------------------------------------------------------------- config

std::string_view to_string(Classifier c) { return c == Classifier::Clcnn ? "clcnn" : "bigru"; }

Classifier parse_classifier(std::string_view text) {
  if (text == "clcnn") return Classifier::Clcnn;
  if (text == "bigru") return Classifier::Bigru;
  fail(ErrorKind::Parameter, "unknown classifier '" + std::string(text) + "' (expected clcnn or bigru)");
}

std::string_view to_string(SentencePooling p) { return p == SentencePooling::TopLayer ? "top" : "all"; }

SentencePooling parse_pooling(std::string_view text) {
  if (text == "top") return SentencePooling::TopLayer;
  if (text == "all") return SentencePooling::AllLayers;
  fail(ErrorKind::Parameter, "unknown sentence pooling '" + std::string(text) + "' (expected top or all)");
}

void ModelConfig::validate() const {
  if (num_classes == 0) fail(ErrorKind::Parameter, "num_classes must be positive");
  if (!(wildcard_ratio >= 0.0 && wildcard_ratio < 1.0))
    fail(ErrorKind::Parameter, "wildcard ratio must lie in [0,1)");
  if (max_len && *max_len == 0) fail(ErrorKind::Parameter, "max_len must be positive");
  if (classifier == Classifier::Clcnn) {
    if (!max_len) fail(ErrorKind::Parameter, "the CLCNN classifier needs a finite max_len");
    if (*max_len < kClcnnMinLength)
      fail(ErrorKind::Parameter, "the CLCNN classifier needs max_len >= " + std::to_string(kClcnnMinLength));
  } else {
    if (gru_hidden == 0 || gru_layers == 0) fail(ErrorKind::Parameter, "GRU width and depth must be positive");
  }
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams p;
  auto& w = p.weights;
  const auto add = [&w](const std::string& name, Shape shape) { w.emplace(name, Tensor(std::move(shape))); };

  add("encoder.conv1.weight", {kEncoderMaps, 1, 3, 3});
  add("encoder.conv1.bias", {kEncoderMaps});
  add("encoder.conv2.weight", {kEncoderMaps, kEncoderMaps, 3, 3});
  add("encoder.conv2.bias", {kEncoderMaps});
  add("encoder.conv3.weight", {kEncoderMaps, kEncoderMaps, 3, 3});
  add("encoder.conv3.bias", {kEncoderMaps});
  add("encoder.fc1.weight", {kEmbedDim, kEncoderFlat});
  add("encoder.fc1.bias", {kEmbedDim});
  add("encoder.fc2.weight", {kEmbedDim, kEmbedDim});
  add("encoder.fc2.bias", {kEmbedDim});

  if (config.classifier == Classifier::Clcnn) {
    add("clcnn.conv1.weight", {kClcnnMaps, kEmbedDim, 3});
    add("clcnn.conv1.bias", {kClcnnMaps});
    for (int i = 2; i <= 4; ++i) {
      add("clcnn.conv" + std::to_string(i) + ".weight", {kClcnnMaps, kClcnnMaps, 3});
      add("clcnn.conv" + std::to_string(i) + ".bias", {kClcnnMaps});
    }
    add("clcnn.fc1.weight", {kClcnnHidden, kClcnnMaps * kClcnnAdaptiveLen});
    add("clcnn.fc1.bias", {kClcnnHidden});
    add("clcnn.fc2.weight", {config.num_classes, kClcnnHidden});
    add("clcnn.fc2.bias", {config.num_classes});
  } else {
    const std::size_t h = config.gru_hidden;
    for (std::size_t l = 0; l < config.gru_layers; ++l)
      for (bool dir : {false, true}) {
        add(gru_name(l, dir, "w_ih"), {3 * h, l == 0 ? kEmbedDim : 2 * h});
        add(gru_name(l, dir, "w_hh"), {3 * h, h});
        add(gru_name(l, dir, "bias"), {3 * h});
      }
    add("bigru.bn.gamma", {2 * h});
    add("bigru.bn.beta", {2 * h});
    add("bigru.fc.weight", {config.num_classes, 2 * h});
    add("bigru.fc.bias", {config.num_classes});
    p.buffers.emplace("bigru.bn.running_mean", Tensor({2 * h}, 0.0f));
    p.buffers.emplace("bigru.bn.running_var", Tensor({2 * h}, 1.0f));
  }

  std::mt19937_64 rng(seed);
  for (auto& [name, t] : w) {
    if (name.ends_with(".bias") || name.ends_with(".beta")) continue;
    if (name.ends_with(".gamma")) {
      t.fill(1.0f);
      continue;
    }
    const std::size_t fan_in = t.size() / t.dim(0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (float& v : t.values()) v = static_cast<float>(dist(rng));
  }
  return p;
}

// ---------------------------------------------------------------- inputs

CharInput make_char_input(const data::Batch& batch, const atlas::GlyphAtlas& atlas) {
  CharInput in;
  in.batch = batch.size();
  in.length = batch.length;
  in.lengths = batch.lengths;
  in.index.resize(batch.glyph_ids.size());
  const atlas::GlyphId max_id = batch.glyph_ids.empty()
                                    ? 0
                                    : *std::max_element(batch.glyph_ids.begin(), batch.glyph_ids.end());
  std::vector<std::int64_t> slot(static_cast<std::size_t>(max_id) + 1, -1);
  std::vector<atlas::GlyphId> distinct;
  for (std::size_t i = 0; i < batch.glyph_ids.size(); ++i) {
    auto& s = slot[batch.glyph_ids[i]];
    if (s < 0) {
      s = static_cast<std::int64_t>(distinct.size());
      distinct.push_back(batch.glyph_ids[i]);
    }
    in.index[i] = static_cast<std::uint32_t>(s);
  }
  in.planes = Tensor({std::max<std::size_t>(distinct.size(), 1), 1, atlas::kGlyphSize, atlas::kGlyphSize});
  for (std::size_t u = 0; u < distinct.size(); ++u)
    atlas::write_feature(atlas.bitmap(distinct[u]), in.planes.data() + u * kGlyphPixels);
  return in;
}

CharInput char_input_from_planes(Tensor planes, std::size_t batch, std::size_t length,
                                 std::vector<std::size_t> lengths) {
  check_planes(planes);
  if (planes.dim(0) != batch * length)
    fail(ErrorKind::Dimension, "expected " + std::to_string(batch * length) + " planes, got " +
                                   std::to_string(planes.dim(0)));
  if (lengths.size() != batch) fail(ErrorKind::Dimension, "one length per batch row is required");
  CharInput in;
  in.planes = std::move(planes);
  in.batch = batch;
  in.length = length;
  in.lengths = std::move(lengths);
  in.index.resize(batch * length);
  for (std::size_t i = 0; i < in.index.size(); ++i) in.index[i] = static_cast<std::uint32_t>(i);
  return in;
}

// ---------------------------------------------------------------- encoder API

Tensor encode_planes(const Tensor& planes, const ModelParams& params) {
  check_planes(planes);
  const std::size_t n = planes.dim(0);
  Tensor out({n, kEmbedDim});
  for (std::size_t begin = 0; begin < n; begin += kEncoderChunk) {
    const std::size_t count = std::min(kEncoderChunk, n - begin);
    EncoderChunk chunk;
    const Tensor emb = encoder_forward(slice_rows(planes, begin, count), params, chunk);
    std::copy(emb.values().begin(), emb.values().end(), out.data() + begin * kEmbedDim);
  }
  return out;
}

Tensor encode_chars(const Tensor& planes, const ModelParams& params, std::size_t batch, std::size_t length) {
  check_planes(planes);
  if (planes.dim(0) != batch * length)
    fail(ErrorKind::Dimension, "encode_chars: " + std::to_string(planes.dim(0)) + " planes for a " +
                                   std::to_string(batch) + "x" + std::to_string(length) + " batch");
  return encode_planes(planes, params).reshaped({batch, length, kEmbedDim});
}

nn::DropoutResult wildcard_dropout(const Tensor& embeddings, double ratio, std::mt19937_64& rng, Mode mode) {
  if (!(ratio >= 0.0 && ratio < 1.0))
    fail(ErrorKind::Parameter, "wildcard ratio must lie in [0,1), got " + std::to_string(ratio));
  if (embeddings.rank() < 1) fail(ErrorKind::Dimension, "wildcard dropout needs a vector axis");
  nn::DropoutResult result{embeddings, {}};
  if (mode == Mode::Eval || ratio == 0.0) return result;
  const std::size_t width = embeddings.dim(embeddings.rank() - 1);
  const std::size_t positions = embeddings.size() / width;
  const float keep_scale = static_cast<float>(1.0 / (1.0 - ratio));
  result.scale.resize(embeddings.size());
  for (std::size_t pos = 0; pos < positions; ++pos) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    const float s = u < ratio ? 0.0f : keep_scale;
    for (std::size_t k = 0; k < width; ++k) {
      result.scale[pos * width + k] = s;
      result.out[pos * width + k] *= s;
    }
  }
  return result;
}

Tensor wildcard_backward(const nn::DropoutResult& result, const Tensor& dout) { return nn::dropout_backward(result, dout); }

// ---------------------------------------------------------------- network

namespace {

struct GruDirection {
  Tensor out;  // [L,B,H]
  std::vector<nn::GruStepCache> steps;
};

struct GruLayer {
  Tensor input;  // [L*B, D]
  GruDirection dirs[2];
};

}  // namespace

struct Trace::Impl {
  std::vector<EncoderChunk> encoder;
  std::size_t distinct = 0;
  std::vector<std::uint32_t> index;
  std::size_t batch = 0, length = 0;
  std::vector<std::size_t> lengths;
  nn::DropoutResult wildcard;

  // CLCNN
  Tensor c_in, a1, a2, a3, a4, flat, h1;
  Pooled q1, q2, q3;

  // BiGRU
  std::vector<GruLayer> layers;
  std::vector<std::vector<std::uint8_t>> active;  // [L][B]
  Tensor sentence;
  nn::BatchNormCache bn;
  Tensor bn_out;
};

Trace::Trace() : impl(std::make_unique<Impl>()) {}
Trace::~Trace() = default;
Trace::Trace(Trace&&) noexcept = default;
Trace& Trace::operator=(Trace&&) noexcept = default;

Network::Network(ModelConfig config) : config_(std::move(config)) { config_.validate(); }
Network::~Network() = default;

Tensor Network::infer(const ModelParams& params, const CharInput& input) const {
  ModelParams& unchanged = const_cast<ModelParams&>(params);  // eval mode never writes buffers
  return forward(unchanged, input, Mode::Eval, nullptr, nullptr);
}

Tensor Network::forward(ModelParams& params, const CharInput& input, Mode mode, std::mt19937_64* rng,
                        Trace* trace) const {
  Trace local;
  Trace& tr = trace ? *trace : local;
  auto& s = *tr.impl;
  const std::size_t B = input.batch, L = input.length;
  if (B == 0 || L == 0) fail(ErrorKind::Dimension, "empty batch");
  if (input.lengths.size() != B || input.index.size() != B * L)
    fail(ErrorKind::Dimension, "character input index does not match its batch shape");
  for (std::size_t b = 0; b < B; ++b)
    if (input.lengths[b] == 0 || input.lengths[b] > L)
      fail(ErrorKind::Length, "row " + std::to_string(b) + " has length " + std::to_string(input.lengths[b]) +
                                  " outside [1," + std::to_string(L) + "]");
  if (config_.classifier == Classifier::Clcnn && L != *config_.max_len)
    fail(ErrorKind::Dimension, "CLCNN input length " + std::to_string(L) + " differs from max_len " +
                                   std::to_string(*config_.max_len));
  if (mode == Mode::Train && config_.wildcard_ratio > 0.0 && !rng)
    fail(ErrorKind::Parameter, "train mode needs a random generator for wildcard dropout");

  s.batch = B;
  s.length = L;
  s.lengths = input.lengths;
  s.index = input.index;

  // Encode each distinct glyph once.
  check_planes(input.planes);
  const std::size_t U = input.planes.dim(0);
  s.distinct = U;
  s.encoder.clear();
  Tensor unique_emb({U, kEmbedDim});
  for (std::size_t begin = 0; begin < U; begin += kEncoderChunk) {
    const std::size_t count = std::min(kEncoderChunk, U - begin);
    auto& chunk = s.encoder.emplace_back();
    const Tensor emb = encoder_forward(slice_rows(input.planes, begin, count), params, chunk);
    std::copy(emb.values().begin(), emb.values().end(), unique_emb.data() + begin * kEmbedDim);
  }
  tr.widths.encoder_flat = s.encoder.front().flat.dim(1);

  Tensor emb({B, L, kEmbedDim});
  for (std::size_t i = 0; i < B * L; ++i)
    std::memcpy(emb.data() + i * kEmbedDim, unique_emb.data() + input.index[i] * kEmbedDim, kEmbedDim * sizeof(float));
  std::mt19937_64 unused;
  s.wildcard = wildcard_dropout(emb, config_.wildcard_ratio, rng ? *rng : unused, mode);
  const Tensor& x = s.wildcard.out;

  if (config_.classifier == Classifier::Clcnn) {
    s.c_in = Tensor({B, kEmbedDim, L});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t k = 0; k < kEmbedDim; ++k) s.c_in[(b * kEmbedDim + k) * L + t] = x[(b * L + t) * kEmbedDim + k];
    s.a1 = nn::relu(nn::conv1d(s.c_in, param(params, "clcnn.conv1.weight"), param(params, "clcnn.conv1.bias"), Padding::Same));
    s.q1 = nn::maxpool(s.a1, kClcnnPool, 1);
    s.a2 = nn::relu(nn::conv1d(s.q1.out, param(params, "clcnn.conv2.weight"), param(params, "clcnn.conv2.bias"), Padding::Same));
    s.q2 = nn::maxpool(s.a2, kClcnnPool, 1);
    s.a3 = nn::relu(nn::conv1d(s.q2.out, param(params, "clcnn.conv3.weight"), param(params, "clcnn.conv3.bias"), Padding::Same));
    s.a4 = nn::relu(nn::conv1d(s.a3, param(params, "clcnn.conv4.weight"), param(params, "clcnn.conv4.bias"), Padding::Same));
    s.q3 = nn::adaptive_maxpool1d(s.a4, kClcnnAdaptiveLen);
    s.flat = s.q3.out.reshaped({B, kClcnnMaps * kClcnnAdaptiveLen});
    tr.widths.classifier_flat = s.flat.dim(1);
    s.h1 = nn::relu(nn::linear(s.flat, param(params, "clcnn.fc1.weight"), param(params, "clcnn.fc1.bias")));
    return nn::linear(s.h1, param(params, "clcnn.fc2.weight"), param(params, "clcnn.fc2.bias"));
  }

  // BiGRU over time-major sequences.
  const std::size_t H = config_.gru_hidden;
  s.active.assign(L, std::vector<std::uint8_t>(B, 0));
  for (std::size_t t = 0; t < L; ++t)
    for (std::size_t b = 0; b < B; ++b) s.active[t][b] = t < input.lengths[b] ? 1 : 0;

  Tensor seq({L * B, kEmbedDim});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < L; ++t)
      std::memcpy(seq.data() + (t * B + b) * kEmbedDim, x.data() + (b * L + t) * kEmbedDim, kEmbedDim * sizeof(float));

  s.layers.assign(config_.gru_layers, GruLayer{});
  for (std::size_t l = 0; l < config_.gru_layers; ++l) {
    auto& layer = s.layers[l];
    layer.input = std::move(seq);
    for (int dir = 0; dir < 2; ++dir) {
      auto& d = layer.dirs[dir];
      const Tensor& w_hh = param(params, gru_name(l, dir == 1, "w_hh"));
      const Tensor gx = nn::linear(layer.input, param(params, gru_name(l, dir == 1, "w_ih")),
                                   param(params, gru_name(l, dir == 1, "bias")));
      d.out = Tensor({L, B, H});
      d.steps.assign(L, nn::GruStepCache{});
      Tensor h({B, H});
      for (std::size_t step = 0; step < L; ++step) {
        const std::size_t t = dir == 0 ? step : L - 1 - step;
        h = nn::gru_step(slice_rows(gx, t * B, B), h, w_hh, &s.active[t], &d.steps[t]);
        std::copy(h.values().begin(), h.values().end(), d.out.data() + t * B * H);
      }
    }
    seq = Tensor({L * B, 2 * H});
    for (std::size_t r = 0; r < L * B; ++r) {
      std::memcpy(seq.data() + r * 2 * H, layer.dirs[0].out.data() + r * H, H * sizeof(float));
      std::memcpy(seq.data() + r * 2 * H + H, layer.dirs[1].out.data() + r * H, H * sizeof(float));
    }
  }

  s.sentence = Tensor({B, 2 * H});
  const std::size_t first_layer = config_.pooling == SentencePooling::TopLayer ? config_.gru_layers - 1 : 0;
  const double layer_count = static_cast<double>(config_.gru_layers - first_layer);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> acc(2 * H, 0.0);
    for (std::size_t l = first_layer; l < config_.gru_layers; ++l)
      for (std::size_t t = 0; t < input.lengths[b]; ++t)
        for (int dir = 0; dir < 2; ++dir) {
          const float* h = s.layers[l].dirs[dir].out.data() + (t * B + b) * H;
          for (std::size_t k = 0; k < H; ++k) acc[dir * H + k] += h[k];
        }
    const double scale = 1.0 / (layer_count * static_cast<double>(input.lengths[b]));
    for (std::size_t k = 0; k < 2 * H; ++k) s.sentence[b * 2 * H + k] = static_cast<float>(acc[k] * scale);
  }
  tr.widths.classifier_flat = s.sentence.dim(1);

  nn::BatchNormState state{params.buffers.at("bigru.bn.running_mean"), params.buffers.at("bigru.bn.running_var")};
  s.bn_out = nn::batch_norm(s.sentence, param(params, "bigru.bn.gamma"), param(params, "bigru.bn.beta"), state, mode, &s.bn);
  if (mode == Mode::Train) {
    params.buffers.at("bigru.bn.running_mean") = std::move(state.running_mean);
    params.buffers.at("bigru.bn.running_var") = std::move(state.running_var);
  }
  return nn::linear(s.bn_out, param(params, "bigru.fc.weight"), param(params, "bigru.fc.bias"));
}

nn::TensorMap Network::backward(const ModelParams& params, const Trace& trace, const Tensor& dlogits) const {
  const auto& s = *trace.impl;
  const std::size_t B = s.batch, L = s.length;
  nn::TensorMap grads;
  Tensor dx({B, L, kEmbedDim});

  if (config_.classifier == Classifier::Clcnn) {
    auto fc2 = nn::linear_backward(s.h1, param(params, "clcnn.fc2.weight"), dlogits);
    accumulate(grads, "clcnn.fc2.weight", std::move(fc2.dw));
    accumulate(grads, "clcnn.fc2.bias", std::move(fc2.db));
    auto fc1 = nn::linear_backward(s.flat, param(params, "clcnn.fc1.weight"), nn::relu_backward(s.h1, fc2.dx));
    accumulate(grads, "clcnn.fc1.weight", std::move(fc1.dw));
    accumulate(grads, "clcnn.fc1.bias", std::move(fc1.db));
    const Tensor da4 = nn::relu_backward(s.a4, nn::pool_backward(s.q3, std::move(fc1.dx).reshaped(s.q3.out.shape())));
    auto c4 = nn::conv1d_backward(s.a3, param(params, "clcnn.conv4.weight"), da4, Padding::Same);
    accumulate(grads, "clcnn.conv4.weight", std::move(c4.dw));
    accumulate(grads, "clcnn.conv4.bias", std::move(c4.db));
    auto c3 = nn::conv1d_backward(s.q2.out, param(params, "clcnn.conv3.weight"), nn::relu_backward(s.a3, c4.dx), Padding::Same);
    accumulate(grads, "clcnn.conv3.weight", std::move(c3.dw));
    accumulate(grads, "clcnn.conv3.bias", std::move(c3.db));
    auto c2 = nn::conv1d_backward(s.q1.out, param(params, "clcnn.conv2.weight"),
                                  nn::relu_backward(s.a2, nn::pool_backward(s.q2, c3.dx)), Padding::Same);
    accumulate(grads, "clcnn.conv2.weight", std::move(c2.dw));
    accumulate(grads, "clcnn.conv2.bias", std::move(c2.db));
    auto c1 = nn::conv1d_backward(s.c_in, param(params, "clcnn.conv1.weight"),
                                  nn::relu_backward(s.a1, nn::pool_backward(s.q1, c2.dx)), Padding::Same);
    accumulate(grads, "clcnn.conv1.weight", std::move(c1.dw));
    accumulate(grads, "clcnn.conv1.bias", std::move(c1.db));
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t)
        for (std::size_t k = 0; k < kEmbedDim; ++k) dx[(b * L + t) * kEmbedDim + k] = c1.dx[(b * kEmbedDim + k) * L + t];
  } else {
    const std::size_t H = config_.gru_hidden;
    auto fc = nn::linear_backward(s.bn_out, param(params, "bigru.fc.weight"), dlogits);
    accumulate(grads, "bigru.fc.weight", std::move(fc.dw));
    accumulate(grads, "bigru.fc.bias", std::move(fc.db));
    auto bn = nn::batch_norm_backward(s.bn, param(params, "bigru.bn.gamma"), fc.dx);
    accumulate(grads, "bigru.bn.gamma", std::move(bn.dgamma));
    accumulate(grads, "bigru.bn.beta", std::move(bn.dbeta));

    const std::size_t layers = config_.gru_layers;
    const std::size_t first_layer = config_.pooling == SentencePooling::TopLayer ? layers - 1 : 0;
    const double layer_count = static_cast<double>(layers - first_layer);
    // d loss / d layer output, [L*B, 2H] per layer.
    std::vector<Tensor> dout(layers);
    for (std::size_t l = 0; l < layers; ++l) dout[l] = Tensor({L * B, 2 * H});
    for (std::size_t l = first_layer; l < layers; ++l)
      for (std::size_t b = 0; b < B; ++b) {
        const float scale = static_cast<float>(1.0 / (layer_count * static_cast<double>(s.lengths[b])));
        for (std::size_t t = 0; t < s.lengths[b]; ++t)
          for (std::size_t k = 0; k < 2 * H; ++k) dout[l][(t * B + b) * 2 * H + k] += bn.dx[b * 2 * H + k] * scale;
      }

    Tensor dseq;
    for (std::size_t l = layers; l-- > 0;) {
      const auto& layer = s.layers[l];
      Tensor dinput(layer.input.shape());
      for (int dir = 0; dir < 2; ++dir) {
        const auto& d = layer.dirs[dir];
        const Tensor& w_hh = param(params, gru_name(l, dir == 1, "w_hh"));
        Tensor dw_hh(w_hh.shape());
        Tensor dgx({L * B, 3 * H});
        Tensor dh({B, H});
        for (std::size_t step = L; step-- > 0;) {
          const std::size_t t = dir == 0 ? step : L - 1 - step;
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < H; ++k) dh[b * H + k] += dout[l][(t * B + b) * 2 * H + dir * H + k];
          auto g = nn::gru_step_backward(d.steps[t], w_hh, dh, dw_hh);
          std::copy(g.dgx.values().begin(), g.dgx.values().end(), dgx.data() + t * B * 3 * H);
          dh = std::move(g.dh_prev);
        }
        auto lin = nn::linear_backward(layer.input, param(params, gru_name(l, dir == 1, "w_ih")), dgx);
        accumulate(grads, gru_name(l, dir == 1, "w_ih"), std::move(lin.dw));
        accumulate(grads, gru_name(l, dir == 1, "bias"), std::move(lin.db));
        accumulate(grads, gru_name(l, dir == 1, "w_hh"), std::move(dw_hh));
        dinput += lin.dx;
      }
      if (l > 0) {
        dout[l - 1] += dinput;
      } else {
        dseq = std::move(dinput);
      }
    }
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t t = 0; t < L; ++t)
        std::memcpy(dx.data() + (b * L + t) * kEmbedDim, dseq.data() + (t * B + b) * kEmbedDim, kEmbedDim * sizeof(float));
  }

  const Tensor demb = wildcard_backward(s.wildcard, dx);
  Tensor dunique({s.distinct, kEmbedDim});
  for (std::size_t i = 0; i < B * L; ++i) {
    float* dst = dunique.data() + s.index[i] * kEmbedDim;
    const float* src = demb.data() + i * kEmbedDim;
    for (std::size_t k = 0; k < kEmbedDim; ++k) dst[k] += src[k];
  }
  std::size_t begin = 0;
  for (const auto& chunk : s.encoder) {
    const std::size_t count = chunk.x.dim(0);
    encoder_backward(chunk, params, slice_rows(dunique, begin, count), grads);
    begin += count;
  }
  return grads;
}

}  // namespace glyphclass::model
