#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "glyphclass/tensor.hpp"

namespace glyphclass::nn {

enum class Mode { Train, Eval };
enum class Padding { Valid, Same };

// Each operator comes with a backward function that maps the upstream
// gradient of its output to gradients of its inputs and parameters.
// Convolutions, pooling and linear maps accept an optional leading batch axis.

/// Valid 3x3 convolution, stride 1. x: [C,H,W] or [N,C,H,W]; w: [F,C,3,3].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b);

struct ConvGrads {
  Tensor dx, dw, db;
};
ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dout);

/// Width-3 convolution, stride 1. x: [C,L] or [N,C,L]; w: [F,C,3].
/// Same padding adds one zero on each end.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, Padding padding);
ConvGrads conv1d_backward(const Tensor& x, const Tensor& w, const Tensor& dout, Padding padding);

/// Output of a max-type pooling plus the flat input index each cell came from.
struct Pooled {
  Tensor out;
  std::vector<std::uint32_t> argmax;
  Shape input_shape;
};

/// Non-overlapping max pooling over the trailing `dims` (1 or 2) axes with
/// window and stride k. Trailing remainders are dropped; ties resolve to the
/// lowest linear index.
Pooled maxpool(const Tensor& x, std::size_t k, int dims);

/// Pools the last axis of length L into m cells; cell j covers
/// [floor(j*L/m), floor((j+1)*L/m)).
Pooled adaptive_maxpool1d(const Tensor& x, std::size_t out_len);

/// Routes each output gradient to its arg-max input cell.
Tensor pool_backward(const Pooled& pooled, const Tensor& dout);

Tensor relu(const Tensor& x);
/// Uses the forward output; the subgradient at 0 is 0.
Tensor relu_backward(const Tensor& out, const Tensor& dout);

/// Wx + b for x: [in] or [N,in]; w: [out,in].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

struct LinearGrads {
  Tensor dx, dw, db;
};
LinearGrads linear_backward(const Tensor& x, const Tensor& w, const Tensor& dout);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

struct BatchNormOptions {
  float eps = 1e-5f;
  float momentum = 0.1f;
};

struct BatchNormCache {
  Tensor normalized;
  std::vector<float> inv_std;
  Mode mode = Mode::Eval;
};

/// Per-channel normalization of x: [B,C]. Train mode uses the batch's biased
/// variance and updates the running statistics; eval mode uses the running
/// statistics. Train mode requires B >= 2.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  BatchNormCache* cache = nullptr, const BatchNormOptions& options = {});

struct BatchNormGrads {
  Tensor dx, dgamma, dbeta;
};
BatchNormGrads batch_norm_backward(const BatchNormCache& cache, const Tensor& gamma, const Tensor& dout);

/// GRU weights with gates stacked in the order update (z), reset (r),
/// candidate (n): w_ih [3H,D], w_hh [3H,H], bias [3H].
struct GruWeights {
  const Tensor& w_ih;
  const Tensor& w_hh;
  const Tensor& bias;
};

struct GruGrads {
  Tensor dw_ih, dw_hh, dbias;
};

/// Per-step activations kept for the backward pass.
struct GruStepCache {
  Tensor h_prev;  // [B,H]
  Tensor z, r, n; // [B,H]
};

/// One step given precomputed input projections gx = x W_ih^T + b ([B,3H]):
///   z = s(gx_z + U_z h), r = s(gx_r + U_r h), n = tanh(gx_n + U_n (r*h)),
///   h' = (1-z)*h + z*n.
/// Rows with active[b] == 0 are carried through unchanged (z forced to 0).
Tensor gru_step(const Tensor& gx, const Tensor& h_prev, const Tensor& w_hh, const std::vector<std::uint8_t>* active,
                GruStepCache* cache);

struct GruStepGrads {
  Tensor dgx;     // [B,3H]
  Tensor dh_prev; // [B,H]
};
/// Accumulates dU into dw_hh.
GruStepGrads gru_step_backward(const GruStepCache& cache, const Tensor& w_hh, const Tensor& dh, Tensor& dw_hh);

/// Single GRU cell over x: [D] or [B,D] and h_prev: [H] or [B,H].
Tensor gru_cell(const Tensor& x, const Tensor& h_prev, const GruWeights& weights, GruStepCache* cache = nullptr);

struct GruCellGrads {
  Tensor dx, dh_prev;
  GruGrads params;
};
GruCellGrads gru_cell_backward(const Tensor& x, const GruStepCache& cache, const GruWeights& weights,
                               const Tensor& dh);

struct DropoutResult {
  Tensor out;
  std::vector<float> scale;  // per element: 0 or 1/(1-p); empty when identity
};

/// Train mode zeroes each element with probability p and scales survivors by
/// 1/(1-p). Eval mode and p == 0 are the identity.
DropoutResult dropout(const Tensor& x, double p, std::mt19937_64& rng, Mode mode);
Tensor dropout_backward(const DropoutResult& result, const Tensor& dout);

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d loss / d logits, [B,C]
};

/// Mean over rows of w[y] * (-log softmax(Z)[y]), with the log-sum-exp taken
/// in shifted form. The gradient row is w[y] * (softmax(Z) - onehot(y)) / B.
LossResult weighted_softmax_ce(const Tensor& logits, const std::vector<int>& labels, const Tensor& class_weights);

/// Row-wise softmax of [B,C] logits.
Tensor softmax(const Tensor& logits);

}  // namespace glyphclass::nn
