#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "glyphclass/tensor.hpp"

namespace glyphclass::nn {

struct GradCheckOptions {
  double step = 1e-3;
  std::size_t samples = 64;
  std::uint64_t seed = 0;
  double denominator_floor = 1e-6;
};

/// Compares analytic gradients with central differences
/// (f(x+h) - f(x-h)) / 2h on a random subsample of coordinates drawn across
/// all `inputs` (every coordinate when there are fewer than `samples`).
///
/// `objective` evaluates the scalar function at the current contents of
/// `inputs`; `analytic[i]` must have the shape of `*inputs[i]`. Returns the
/// maximum relative error |a - n| / max(|a|, |n|, denominator_floor).
double finite_diff_check(const std::function<double()>& objective, std::span<Tensor* const> inputs,
                         std::span<const Tensor> analytic, const GradCheckOptions& options = {});

}  // namespace glyphclass::nn
