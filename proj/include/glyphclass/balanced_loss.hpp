#pragma once

#include <cstdint>
#include <vector>

#include "glyphclass/ops.hpp"

namespace glyphclass::loss {

/// Per-class training sample counts n_y, indexed by label id.
struct ClassStats {
  std::vector<std::uint64_t> counts;

  std::size_t num_classes() const { return counts.size(); }
};

struct ClassWeights {
  std::vector<double> w;
  double beta = 0.0;

  /// Weights as a float tensor of shape [C].
  nn::Tensor tensor() const;
};

/// (1 - beta^n) / (1 - beta): the expected number of distinct samples among
/// n draws when each new sample overlaps the covered set with probability
/// beta. Saturates at 1/(1-beta) once beta^n underflows.
/// Throws Error{Parameter} unless n >= 1 and 0 <= beta < 1.
double effective_number(std::uint64_t n, double beta);

/// Raw weights (1-beta)/(1-beta^n_y), rescaled to sum to C when `normalize`.
ClassWeights cb_weights(const ClassStats& stats, double beta, bool normalize = true);

/// Uniform unit weights, i.e. plain softmax cross-entropy.
ClassWeights uniform_weights(std::size_t num_classes);

/// Class-balanced softmax cross-entropy; see nn::weighted_softmax_ce.
nn::LossResult cb_softmax_loss(const nn::Tensor& logits, const std::vector<int>& labels,
                               const ClassWeights& weights);

}  // namespace glyphclass::loss
