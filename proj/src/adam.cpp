#include "glyphclass/adam.hpp"

#include <cmath>

#include "glyphclass/error.hpp"

namespace glyphclass::nn {

void adam_step(TensorMap& params, const TensorMap& grads, AdamState& state, const AdamOptions& options) {
  if (!(options.lr >= 0.0f)) fail(ErrorKind::Parameter, "adam: learning rate must be non-negative");
  for (const auto& [name, grad] : grads) {
    const auto it = params.find(name);
    if (it == params.end()) fail(ErrorKind::Parameter, "adam: gradient for unknown parameter '" + name + "'");
    require_shape(grad, it->second.shape(), "adam gradient '" + name + "'");
    for (float g : grad.values())
      if (!std::isfinite(g)) fail(ErrorKind::Divergence, "adam: non-finite gradient in parameter '" + name + "'");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const float correction1 = static_cast<float>(1.0 - std::pow(static_cast<double>(options.beta1), t));
  const float correction2 = static_cast<float>(1.0 - std::pow(static_cast<double>(options.beta2), t));

  for (const auto& [name, grad] : grads) {
    Tensor& param = params.at(name);
    auto [m_it, m_new] = state.m.try_emplace(name, Tensor::zeros_like(param));
    auto [v_it, v_new] = state.v.try_emplace(name, Tensor::zeros_like(param));
    Tensor& m = m_it->second;
    Tensor& v = v_it->second;
    for (std::size_t i = 0; i < param.size(); ++i) {
      const float g = grad[i];
      m[i] = options.beta1 * m[i] + (1.0f - options.beta1) * g;
      v[i] = options.beta2 * v[i] + (1.0f - options.beta2) * g * g;
      const float m_hat = m[i] / correction1;
      const float v_hat = v[i] / correction2;
      param[i] -= options.lr * m_hat / (std::sqrt(v_hat) + options.eps);
    }
  }
}

}  // namespace glyphclass::nn
