#pragma once

#include <cmath>
#include <map>
#include <string>

#include "parameters.hpp"

namespace tdpaint {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment buffers keyed by parameter name, plus the step count
/// used for bias correction.
struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  long long step = 0;
};

/// One Adam update using the gradients currently stored on `params`.
/// Parameters without a gradient are treated as having a zero gradient.
inline void adam_step(Parameters& params, AdamState& state, const AdamOptions& opt) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  const float b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
  for (auto& [name, var] : params) {
    Tensor& value = var.mutable_value();
    auto [mit, m_new] = state.m.try_emplace(name, Tensor(value.shape));
    auto [vit, v_new] = state.v.try_emplace(name, Tensor(value.shape));
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    if (m.shape != value.shape || v.shape != value.shape)
      throw std::invalid_argument("adam_step: moment buffer shape mismatch for " + name);
    const bool has = var.has_grad();
    for (std::size_t i = 0; i < value.numel(); ++i) {
      const float g = has ? var.grad()[i] : 0.0f;
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      value[i] -= static_cast<float>(opt.lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
  }
}

}  // namespace tdpaint
