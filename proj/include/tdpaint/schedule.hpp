#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"
#include "timemap.hpp"

namespace tdpaint {

/// Precomputed linear beta schedule. Index 0 is the clean-data level:
/// beta[0] = 0, alpha[0] = alphabar[0] = 1.
struct ScheduleTable {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<float> beta;
  std::vector<float> alpha;
  std::vector<float> alphabar;

  void check_step(int t) const {
    if (t < 0 || t > T)
      throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  }
};

inline ScheduleTable build_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument("build_schedule: need 0 < beta_start <= beta_end < 1");
  ScheduleTable s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(T + 1, 0.0f);
  s.alpha.assign(T + 1, 1.0f);
  s.alphabar.assign(T + 1, 1.0f);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    s.beta[t] = static_cast<float>(beta_start + frac * (beta_end - beta_start));
    s.alpha[t] = 1.0f - s.beta[t];
    s.alphabar[t] = s.alphabar[t - 1] * s.alpha[t];
  }
  return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. t = 0 returns x0 unchanged.
inline Tensor forward_diffuse_scalar(const Tensor& x0, int t, const Tensor& eps, const ScheduleTable& table) {
  require_same_shape(x0, eps, "forward_diffuse_scalar");
  table.check_step(t);
  if (t == 0) return x0;
  const float a = std::sqrt(table.alphabar[t]);
  const float b = std::sqrt(1.0f - table.alphabar[t]);
  Tensor out(x0.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

/// Per-pixel marginal: every channel of pixel (i, j) is diffused to level
/// tmap(i, j). Pixels at level 0 are copied through.
inline Tensor forward_diffuse_pixelwise(const Tensor& x0, const TimeMap& tmap, const Tensor& eps,
                                        const ScheduleTable& table) {
  require_same_shape(x0, eps, "forward_diffuse_pixelwise");
  require_image(x0, "forward_diffuse_pixelwise");
  if (tmap.height != height(x0) || tmap.width != width(x0))
    throw std::invalid_argument("forward_diffuse_pixelwise: time map " + std::to_string(tmap.height) + "x" +
                                std::to_string(tmap.width) + " does not match image " + shape_string(x0.shape));
  tmap.check_range(table.T);
  const std::size_t plane = tmap.values.size();
  Tensor out(x0.shape);
  for (std::size_t p = 0; p < plane; ++p) {
    const int t = tmap.values[p];
    if (t == 0) {
      for (int c = 0; c < channels(x0); ++c) out[c * plane + p] = x0[c * plane + p];
      continue;
    }
    const float a = std::sqrt(table.alphabar[t]);
    const float b = std::sqrt(1.0f - table.alphabar[t]);
    for (int c = 0; c < channels(x0); ++c) {
      const std::size_t i = c * plane + p;
      out[i] = a * x0[i] + b * eps[i];
    }
  }
  return out;
}

/// One forward Markov step x_{t-1} -> x_t with fresh noise z.
inline Tensor forward_step(const Tensor& x_prev, int t, const Tensor& z, const ScheduleTable& table) {
  require_same_shape(x_prev, z, "forward_step");
  if (t < 1 || t > table.T) throw std::out_of_range("forward_step: t outside [1, T]");
  const float a = std::sqrt(table.alpha[t]);
  const float b = std::sqrt(table.beta[t]);
  Tensor out(x_prev.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x_prev[i] + b * z[i];
  return out;
}

/// Elementwise abar lookup over a time map, row-major h x w.
inline std::vector<float> alphabar_field(const ScheduleTable& table, const TimeMap& tmap) {
  tmap.check_range(table.T);
  std::vector<float> out(tmap.values.size());
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = table.alphabar[tmap.values[p]];
  return out;
}

}  // namespace tdpaint
