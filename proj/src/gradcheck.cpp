#include "glyphclass/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "glyphclass/error.hpp"

namespace glyphclass::nn {

double finite_diff_check(const std::function<double()>& objective, std::span<Tensor* const> inputs,
                         std::span<const Tensor> analytic, const GradCheckOptions& options) {
  if (inputs.size() != analytic.size())
    fail(ErrorKind::Dimension, "finite_diff_check: " + std::to_string(inputs.size()) + " inputs but " +
                                   std::to_string(analytic.size()) + " analytic gradients");
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    require_shape(analytic[t], inputs[t]->shape(), "finite_diff_check analytic gradient");
    for (std::size_t i = 0; i < inputs[t]->size(); ++i) coords.emplace_back(t, i);
  }
  if (coords.size() > options.samples) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.samples);
  }

  double worst = 0.0;
  for (const auto& [t, i] : coords) {
    float& x = (*inputs[t])[i];
    const float original = x;
    const float plus = static_cast<float>(original + options.step);
    const float minus = static_cast<float>(original - options.step);
    x = plus;
    const double f_plus = objective();
    x = minus;
    const double f_minus = objective();
    x = original;
    // The step is measured on the stored float values.
    const double numeric = (f_plus - f_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
    const double exact = analytic[t][i];
    const double denom = std::max({std::abs(exact), std::abs(numeric), options.denominator_floor});
    worst = std::max(worst, std::abs(exact - numeric) / denom);
  }
  return worst;
}

}  // namespace glyphclass::nn
