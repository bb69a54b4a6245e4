#include "glyphclass/balanced_loss.hpp"

#include <cmath>
#include <numeric>

#include "glyphclass/error.hpp"

namespace glyphclass::loss {

nn::Tensor ClassWeights::tensor() const {
  nn::Tensor t({w.size()});
  for (std::size_t i = 0; i < w.size(); ++i) t[i] = static_cast<float>(w[i]);
  return t;
}

double effective_number(std::uint64_t n, double beta) {
  if (!(beta >= 0.0 && beta < 1.0))
    fail(ErrorKind::Parameter, "beta must lie in [0,1), got " + std::to_string(beta));
  if (n == 0) fail(ErrorKind::Parameter, "effective number needs n >= 1");
  if (beta == 0.0) return 1.0;
  // 1 - beta^n evaluated as -expm1(n log beta) keeps precision for beta
  // close to 1, where beta^n is close to 1 as well.
  const double log_power = static_cast<double>(n) * std::log(beta);
  const double numerator = -std::expm1(log_power);
  return numerator / (1.0 - beta);
}

ClassWeights cb_weights(const ClassStats& stats, double beta, bool normalize) {
  ClassWeights out;
  out.beta = beta;
  out.w.reserve(stats.counts.size());
  for (std::size_t y = 0; y < stats.counts.size(); ++y) {
    if (stats.counts[y] == 0)
      fail(ErrorKind::MissingClass, "class " + std::to_string(y) + " has no training samples");
    out.w.push_back(1.0 / effective_number(stats.counts[y], beta));
  }
  if (normalize && !out.w.empty()) {
    const double total = std::accumulate(out.w.begin(), out.w.end(), 0.0);
    const double scale = static_cast<double>(out.w.size()) / total;
    for (double& w : out.w) w *= scale;
  }
  return out;
}

ClassWeights uniform_weights(std::size_t num_classes) {
  return ClassWeights{std::vector<double>(num_classes, 1.0), 0.0};
}

nn::LossResult cb_softmax_loss(const nn::Tensor& logits, const std::vector<int>& labels,
                               const ClassWeights& weights) {
  return nn::weighted_softmax_ce(logits, labels, weights.tensor());
}

}  // namespace glyphclass::loss
