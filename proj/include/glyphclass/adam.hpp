#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "glyphclass/tensor.hpp"

namespace glyphclass::nn {

using TensorMap = std::map<std::string, Tensor>;

struct AdamOptions {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

/// First and second moment estimates, keyed like the parameters they track.
struct AdamState {
  std::uint64_t step = 0;
  TensorMap m;
  TensorMap v;
};

/// Bias-corrected Adam update of every parameter that has a gradient.
/// Throws Error{Divergence} naming the parameter when a gradient is not
/// finite; nothing is modified in that case.
void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamOptions& options = {});

}  // namespace glyphclass::nn
