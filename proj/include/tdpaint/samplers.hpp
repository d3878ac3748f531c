#pragma once

// Ancestral samplers: unconditional DDPM, time-map inpainting (clean
// condition at time 0, generated region at time t, one network evaluation per
// step), and the RePaint baseline (noisy condition plus resampling).
//
// Reverse step for a pixel at time t, with fixed variance beta_t:
//   x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sqrt(beta_t) z,
// z = 0 at t = 1. The implied clean estimate is
//   x0_hat = (x_t - sqrt(1 - abar_t) * eps) / sqrt(abar_t).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "random.hpp"
#include "schedule.hpp"
#include "timemap.hpp"

namespace tdpaint {

/// Anything that predicts noise from a noisy image and its time map. The
/// scalar entry point is the classic single-t conditioning.
template <class D>
concept Denoiser = requires(const D& d, const Tensor& x, const TimeMap& tau, int t) {
  { d.predict(x, tau) } -> std::convertible_to<Tensor>;
  { d.predict_scalar(x, t) } -> std::convertible_to<Tensor>;
};

class UNetDenoiser {
 public:
  UNetDenoiser(const Parameters& params, UNetConfig cfg) : params_(&params), cfg_(cfg) {}

  Tensor predict(const Tensor& x, const TimeMap& tau) const { return predict_noise(x, tau, *params_, cfg_); }
  Tensor predict_scalar(const Tensor& x, int t) const { return predict_noise_scalar(x, t, *params_, cfg_); }

  const UNetConfig& config() const { return cfg_; }

 private:
  const Parameters* params_;
  UNetConfig cfg_;
};

/// Wraps a denoiser and counts evaluations.
template <Denoiser D>
class CountingDenoiser {
 public:
  explicit CountingDenoiser(const D& inner) : inner_(&inner) {}

  Tensor predict(const Tensor& x, const TimeMap& tau) const {
    ++count_;
    return inner_->predict(x, tau);
  }
  Tensor predict_scalar(const Tensor& x, int t) const {
    ++count_;
    return inner_->predict_scalar(x, t);
  }
  long long count() const { return count_; }
  void reset() { count_ = 0; }

 private:
  const D* inner_;
  mutable long long count_ = 0;
};

/// Returns zeros; used where only the sampler's control flow matters.
struct ZeroDenoiser {
  Tensor predict(const Tensor& x, const TimeMap&) const { return Tensor(x.shape); }
  Tensor predict_scalar(const Tensor& x, int) const { return Tensor(x.shape); }
};

enum class Method { ddpm, tdpaint, repaint };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::ddpm: return "ddpm";
    case Method::tdpaint: return "tdpaint";
    case Method::repaint: return "repaint";
  }
  return "?";
}

inline Method parse_method(std::string_view name) {
  if (name == "ddpm") return Method::ddpm;
  if (name == "tdpaint") return Method::tdpaint;
  if (name == "repaint") return Method::repaint;
  throw std::invalid_argument("unknown sampling method '" + std::string(name) + "' (valid: ddpm, tdpaint, repaint)");
}

/// How constant-time evaluations reach the network: through the per-pixel
/// path with a constant map, or through the scalar path.
enum class TimeConditioning { pixelwise, scalar };

struct SamplerConfig {
  Method method = Method::tdpaint;
  std::uint64_t seed = 0;
  int resample_r = 1;  // RePaint: total passes per step
  int jump_j = 1;      // RePaint: forward re-noising span
  TimeConditioning conditioning = TimeConditioning::pixelwise;
  // Re-noise the current generated region to level t before each step
  // (the literal reading of the generic-phi algorithm). Off: the generated
  // region keeps its current noise level.
  bool literal_renoise = false;
  // Clamp the returned sample to [-1, 1]. Unset: on for ddpm, off for the
  // inpainting samplers.
  std::optional<bool> clamp_output;

  void validate() const {
    if (resample_r < 1) throw std::invalid_argument("resample_r must be >= 1");
    if (jump_j < 1) throw std::invalid_argument("jump_j must be >= 1");
  }
};

/// Observer called once per main sampling step with the step's time t and
/// the clean-image estimate implied by that step's noise prediction.
using StepObserver = std::function<void(int t, const Tensor& x0_hat)>;

/// Closed-form number of network evaluations.
///   ddpm, tdpaint: T
///   repaint: T + (r - 1) * sum_{s=1}^{T-1} min(j, T - s)
/// (after each step t -> t-1 with t > 1, each extra pass jumps forward to
/// min(t-1+j, T) and denoises back, one evaluation per level).
inline long long nfe_count(Method method, int T, int resample_r = 1, int jump_j = 1) {
  if (T < 1) throw std::invalid_argument("nfe_count: T must be >= 1");
  switch (method) {
    case Method::ddpm:
    case Method::tdpaint: return T;
    case Method::repaint: {
      if (resample_r < 1 || jump_j < 1) throw std::invalid_argument("nfe_count: resample_r and jump_j must be >= 1");
      const long long n = T - 1;  // levels s = 1..T-1, span min(j, T - s) = min(j, u) for u = 1..n
      const long long j = jump_j;
      const long long span = j >= n ? n * (n + 1) / 2 : j * (j + 1) / 2 + j * (n - j);
      return T + static_cast<long long>(resample_r - 1) * span;
    }
  }
  throw std::invalid_argument("nfe_count: unknown method");
}

inline long long nfe_count(std::string_view method, int T, int resample_r = 1, int jump_j = 1) {
  return nfe_count(parse_method(method), T, resample_r, jump_j);
}

namespace detail {

inline void check_finite(const Tensor& x, int t) {
  if (!x.all_finite()) throw NumericError(t, "non-finite value in sampler state");
}

inline Tensor x0_estimate(const Tensor& x_t, const Tensor& eps, int t, const ScheduleTable& table) {
  const float sa = std::sqrt(table.alphabar[t]);
  const float sb = std::sqrt(1.0f - table.alphabar[t]);
  Tensor out(x_t.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (x_t[i] - sb * eps[i]) / sa;
  return out;
}

// Reverse-step value of element i. `z` is ignored at t = 1.
inline float reverse_value(float x, float eps, float z, int t, const ScheduleTable& table) {
  const float coef = table.beta[t] / std::sqrt(1.0f - table.alphabar[t]);
  const float mean = (x - coef * eps) / std::sqrt(table.alpha[t]);
  return t > 1 ? mean + std::sqrt(table.beta[t]) * z : mean;
}

template <Denoiser D>
Tensor constant_time_predict(const D& denoiser, const Tensor& x, int t, TimeConditioning mode) {
  if (mode == TimeConditioning::scalar) return denoiser.predict_scalar(x, t);
  return denoiser.predict(x, TimeMap(height(x), width(x), t));
}

inline void check_condition(const Tensor& condition, const Mask& mask) {
  require_image(condition, "inpaint");
  if (mask.height != height(condition) || mask.width != width(condition))
    throw std::invalid_argument("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                                " does not match image " + shape_string(condition.shape));
  if (mask.all_known()) throw std::invalid_argument("mask has no unknown pixels");
  if (!condition.all_finite()) throw std::invalid_argument("condition contains non-finite values");
}

inline bool clamp_for(const SamplerConfig& cfg) {
  return cfg.clamp_output.value_or(cfg.method == Method::ddpm);
}

}  // namespace detail

/// Unconditional ancestral sampling from x_T ~ N(0, I).
template <Denoiser D>
Tensor ddpm_sample(const D& denoiser, const ScheduleTable& table, const SamplerConfig& cfg, const Shape& shape,
                   const StepObserver& observer = {}) {
  cfg.validate();
  Rng rng = Rng::stream(cfg.seed, "ddpm");
  Tensor x = rng.normal_tensor(shape);
  require_image(x, "ddpm_sample");
  for (int t = table.T; t >= 1; --t) {
    const Tensor z = t > 1 ? rng.normal_tensor(shape) : Tensor(shape);
    const Tensor eps = detail::constant_time_predict(denoiser, x, t, cfg.conditioning);
    if (observer) observer(t, detail::x0_estimate(x, eps, t, table));
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = detail::reverse_value(x[i], eps[i], z[i], t, table);
    detail::check_finite(x, t);
  }
  return detail::clamp_for(cfg) ? clamp(std::move(x), -1.0f, 1.0f) : x;
}

/// Time-map inpainting: each step feeds the network the clean condition on
/// known pixels (time 0) merged with the current generated pixels (time t),
/// then applies the reverse step to the generated pixels only. Known pixels
/// of the result are copied from `condition`.
template <Denoiser D>
Tensor tdpaint_inpaint(const D& denoiser, const ScheduleTable& table, const Tensor& condition, const Mask& mask,
                       const SamplerConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  detail::check_condition(condition, mask);
  const std::size_t plane = mask.values.size();
  const int c = channels(condition);
  Rng rng = Rng::stream(cfg.seed, "tdpaint");
  Tensor x = rng.normal_tensor(condition.shape);
  auto merge_condition = [&](Tensor& state) {
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p)
        if (mask.values[p]) state[ch * plane + p] = condition[ch * plane + p];
  };
  merge_condition(x);
  for (int t = table.T; t >= 1; --t) {
    const Tensor z = t > 1 ? rng.normal_tensor(condition.shape) : Tensor(condition.shape);
    if (cfg.literal_renoise) {
      const Tensor e = rng.normal_tensor(condition.shape);
      const float sa = std::sqrt(table.alphabar[t]), sb = std::sqrt(1.0f - table.alphabar[t]);
      for (int ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < plane; ++p)
          if (!mask.values[p]) {
            const std::size_t i = ch * plane + p;
            x[i] = sa * x[i] + sb * e[i];
          }
    }
    const TimeMap tau = generation_timemap(mask, t);
    const Tensor eps = denoiser.predict(x, tau);
    if (observer) observer(t, detail::x0_estimate(x, eps, t, table));
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        if (mask.values[p]) continue;
        const std::size_t i = ch * plane + p;
        x[i] = detail::reverse_value(x[i], eps[i], z[i], t, table);
      }
    detail::check_finite(x, t);
  }
  return detail::clamp_for(cfg) ? clamp(std::move(x), -1.0f, 1.0f) : x;
}

/// RePaint baseline. Each denoising evaluation at level s produces the
/// generated region by the reverse step and the known region by diffusing
/// the condition to level s-1; with resample_r > 1 the state is pushed
/// forward up to jump_j levels and denoised again, r - 1 extra times per
/// step.
template <Denoiser D>
Tensor repaint_inpaint(const D& denoiser, const ScheduleTable& table, const Tensor& condition, const Mask& mask,
                       const SamplerConfig& cfg, const StepObserver& observer = {}) {
  cfg.validate();
  detail::check_condition(condition, mask);
  const std::size_t plane = mask.values.size();
  const int c = channels(condition);
  const Shape& shape = condition.shape;
  Rng rng = Rng::stream(cfg.seed, "repaint");
  Tensor x = rng.normal_tensor(shape);

  // x at level s -> level s-1; returns the x0 estimate.
  auto denoise = [&](int s) {
    const Tensor eps = detail::constant_time_predict(denoiser, x, s, cfg.conditioning);
    Tensor x0_hat = observer ? detail::x0_estimate(x, eps, s, table) : Tensor{};
    const Tensor z = s > 1 ? rng.normal_tensor(shape) : Tensor(shape);
    const Tensor n = s - 1 > 0 ? rng.normal_tensor(shape) : Tensor(shape);
    const float ka = std::sqrt(table.alphabar[s - 1]), kb = std::sqrt(1.0f - table.alphabar[s - 1]);
    for (int ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < plane; ++p) {
        const std::size_t i = ch * plane + p;
        if (mask.values[p]) {
          x[i] = s - 1 == 0 ? condition[i] : ka * condition[i] + kb * n[i];
        } else {
          x[i] = detail::reverse_value(x[i], eps[i], z[i], s, table);
        }
      }
    detail::check_finite(x, s);
    return x0_hat;
  };

  for (int t = table.T; t >= 1; --t) {
    Tensor x0_hat = denoise(t);
    if (observer) observer(t, x0_hat);
    if (t == 1) break;
    for (int pass = 1; pass < cfg.resample_r; ++pass) {
      const int top = std::min(t - 1 + cfg.jump_j, table.T);
      for (int s = t; s <= top; ++s) x = forward_step(x, s, rng.normal_tensor(shape), table);
      for (int s = top; s >= t; --s) denoise(s);
    }
  }
  return detail::clamp_for(cfg) ? clamp(std::move(x), -1.0f, 1.0f) : x;
}

/// Dispatch on cfg.method. ddpm ignores the condition except for its shape.
template <Denoiser D>
Tensor inpaint(const D& denoiser, const ScheduleTable& table, const Tensor& condition, const Mask& mask,
               const SamplerConfig& cfg, const StepObserver& observer = {}) {
  switch (cfg.method) {
    case Method::tdpaint: return tdpaint_inpaint(denoiser, table, condition, mask, cfg, observer);
    case Method::repaint: return repaint_inpaint(denoiser, table, condition, mask, cfg, observer);
    case Method::ddpm: return ddpm_sample(denoiser, table, cfg, condition.shape, observer);
  }
  throw std::invalid_argument("unknown method");
}

struct QualityCurve {
  std::vector<int> t;          // main-step times, T down to 1
  std::vector<double> mse;     // unknown-region MSE of the x0 estimate at that step
  Tensor sample;               // final sampler output
  double final_mse = 0.0;      // unknown-region MSE of `sample`
};

/// Unknown-region MSE of each main step's clean-image estimate against
/// `ground_truth`, whose known pixels also serve as the condition.
template <Denoiser D>
QualityCurve quality_vs_step(const D& denoiser, const ScheduleTable& table, const Tensor& ground_truth,
                             const Mask& mask, const SamplerConfig& cfg) {
  QualityCurve curve;
  curve.t.reserve(static_cast<std::size_t>(table.T));
  curve.mse.reserve(static_cast<std::size_t>(table.T));
  StepObserver obs = [&](int t, const Tensor& x0_hat) {
    curve.t.push_back(t);
    curve.mse.push_back(masked_mse(x0_hat, ground_truth, mask));
  };
  curve.sample = inpaint(denoiser, table, ground_truth, mask, cfg, obs);
  curve.final_mse = masked_mse(curve.sample, ground_truth, mask);
  return curve;
}

/// Number of main steps taken before the curve enters, and then stays
/// within, `rel_tol` of its last value.
inline int steps_to_converge(const std::vector<double>& mse, double rel_tol = 0.1) {
  if (mse.empty()) return 0;
  const double final_v = mse.back();
  int idx = static_cast<int>(mse.size()) - 1;
  while (idx > 0 && std::abs(mse[static_cast<std::size_t>(idx - 1)] - final_v) <= rel_tol * std::abs(final_v)) --idx;
  return idx + 1;
}

}  // namespace tdpaint
