#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "tdpaint/samplers.hpp"
#include "tdpaint/training.hpp"

using namespace tdpaint;

namespace {

// Exact noise predictor for data with independent pixels x0 ~ N(mu, s^2):
// E[eps | x_t] = sqrt(1 - a) (x_t - sqrt(a) mu) / (a s^2 + 1 - a).
struct GaussianDenoiser {
  const ScheduleTable* table;
  double mu, s2;

  float eps(float x, int t) const {
    if (t == 0) return 0.0f;
    const double a = table->alphabar[t];
    return static_cast<float>(std::sqrt(1.0 - a) * (x - std::sqrt(a) * mu) / (a * s2 + 1.0 - a));
  }
  Tensor predict(const Tensor& x, const TimeMap& tau) const {
    Tensor out(x.shape);
    const std::size_t plane = tau.values.size();
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = eps(x[i], tau.values[i % plane]);
    return out;
  }
  Tensor predict_scalar(const Tensor& x, int t) const { return predict(x, TimeMap(height(x), width(x), t)); }
};

// Deterministic pseudo-random predictions depending on input and time.
struct WobblyDenoiser {
  Tensor predict(const Tensor& x, const TimeMap& tau) const {
    Tensor out(x.shape);
    const std::size_t plane = tau.values.size();
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = 0.3f * std::sin(3.0f * x[i] + 0.01f * tau.values[i % plane]);
    return out;
  }
  Tensor predict_scalar(const Tensor& x, int t) const { return predict(x, TimeMap(height(x), width(x), t)); }
};

struct NanDenoiser {
  Tensor predict(const Tensor& x, const TimeMap&) const { return Tensor(x.shape, std::numeric_limits<float>::quiet_NaN()); }
  Tensor predict_scalar(const Tensor& x, int) const { return Tensor(x.shape, std::numeric_limits<float>::quiet_NaN()); }
};

long long nfe_oracle(Method m, int T, int r, int j) {
  if (m != Method::repaint) return T;
  long long n = T;
  for (int t = T; t >= 2; --t) n += static_cast<long long>(r - 1) * (std::min(t - 1 + j, T) - t + 1);
  return n;
}

template <class D>
long long counted(const D& inner, const ScheduleTable& table, const SamplerConfig& cfg) {
  CountingDenoiser<D> counter(inner);
  Tensor cond({1, 4, 4}, 0.2f);
  inpaint(counter, table, cond, gen_half(4, 4), cfg);
  return counter.count();
}

UNetConfig tiny_unet() {
  UNetConfig c;
  c.base_width = 8;
  c.depth = 2;
  c.time_embed_dim = 16;
  c.num_res_blocks = 1;
  return c;
}

}  // namespace

TEST(Nfe, ClosedFormMatchesOracleAndInstrumentedCounts) {
  ZeroDenoiser zero;
  for (int T : {1, 2, 7, 30}) {
    const auto table = build_schedule(T, 1e-3, 0.05);
    for (auto m : {Method::ddpm, Method::tdpaint, Method::repaint})
      for (int r : {1, 2, 5})
        for (int j : {1, 3, 40}) {
          SamplerConfig cfg;
          cfg.method = m;
          cfg.resample_r = r;
          cfg.jump_j = j;
          cfg.clamp_output = true;
          const long long want = nfe_oracle(m, T, r, j);
          EXPECT_EQ(nfe_count(m, T, r, j), want) << to_string(m) << " T=" << T << " r=" << r << " j=" << j;
          EXPECT_EQ(counted(zero, table, cfg), want) << to_string(m) << " T=" << T << " r=" << r << " j=" << j;
        }
  }
}

TEST(Nfe, LongRepaintSchedule) {
  EXPECT_EQ(nfe_count(Method::repaint, 250, 20, 1), 250 + 19 * 249);
  EXPECT_EQ(nfe_count(Method::repaint, 250, 20, 1), 4981);
  EXPECT_EQ(nfe_count("repaint", 250, 10, 10), nfe_oracle(Method::repaint, 250, 10, 10));
  EXPECT_EQ(nfe_count("tdpaint", 250), 250);
  const auto table = build_schedule(250, 1e-4, 0.02);
  SamplerConfig cfg;
  cfg.method = Method::repaint;
  cfg.resample_r = 20;
  cfg.clamp_output = true;
  EXPECT_EQ(counted(ZeroDenoiser{}, table, cfg), 4981);
  EXPECT_THROW(nfe_count(Method::repaint, 0), std::invalid_argument);
  EXPECT_THROW(nfe_count("dpm", 10), std::invalid_argument);
}

TEST(Inpaint, KnownRegionExact) {
  const auto table = build_schedule(40, 1e-3, 0.1);
  Rng rng(1);
  WobblyDenoiser den;
  for (int trial = 0; trial < 10; ++trial) {
    Tensor cond = oracle::random_tensor(rng, {2, 8, 8});
    Rng mrng = Rng::stream(trial, "mask");
    Mask mask = make_mask(trial % 2 ? MaskFamily::brush : MaskFamily::wide, mrng, 8, 8);
    for (auto m : {Method::tdpaint, Method::repaint})
      for (bool literal : {false, true}) {
        SamplerConfig cfg;
        cfg.method = m;
        cfg.seed = static_cast<std::uint64_t>(trial);
        cfg.resample_r = m == Method::repaint ? 3 : 1;
        cfg.literal_renoise = literal;
        auto out = inpaint(den, table, cond, mask, cfg);
        for (int c = 0; c < 2; ++c)
          for (std::size_t p = 0; p < 64; ++p)
            if (mask.values[p]) {
              ASSERT_EQ(out[c * 64 + p], cond[c * 64 + p]);
            }
      }
  }
}

TEST(Inpaint, LiteralRenoiseChangesGeneratedRegion) {
  const auto table = build_schedule(20, 1e-3, 0.1);
  Tensor cond({1, 8, 8}, 0.1f);
  SamplerConfig a, b;
  b.literal_renoise = true;
  EXPECT_NE(inpaint(WobblyDenoiser{}, table, cond, gen_half(8, 8), a),
            inpaint(WobblyDenoiser{}, table, cond, gen_half(8, 8), b));
}

TEST(Inpaint, DeterministicPerSeed) {
  const auto table = build_schedule(25, 1e-3, 0.1);
  Tensor cond({1, 8, 8}, -0.4f);
  for (auto m : {Method::ddpm, Method::tdpaint, Method::repaint}) {
    SamplerConfig cfg;
    cfg.method = m;
    cfg.seed = 9;
    cfg.resample_r = 2;
    auto a = inpaint(WobblyDenoiser{}, table, cond, gen_half(8, 8), cfg);
    auto b = inpaint(WobblyDenoiser{}, table, cond, gen_half(8, 8), cfg);
    EXPECT_EQ(a, b);
    cfg.seed = 10;
    EXPECT_NE(a, inpaint(WobblyDenoiser{}, table, cond, gen_half(8, 8), cfg));
  }
}

TEST(Inpaint, InvalidInputsRejected) {
  const auto table = build_schedule(5, 1e-3, 0.1);
  SamplerConfig cfg;
  EXPECT_THROW(inpaint(ZeroDenoiser{}, table, Tensor({1, 4, 4}), Mask(4, 4, 1), cfg), std::invalid_argument);
  EXPECT_THROW(inpaint(ZeroDenoiser{}, table, Tensor({1, 4, 4}), gen_half(4, 6), cfg), std::invalid_argument);
  Tensor bad({1, 4, 4});
  bad[3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(inpaint(ZeroDenoiser{}, table, bad, gen_half(4, 4), cfg), std::invalid_argument);
  cfg.resample_r = 0;
  cfg.method = Method::repaint;
  EXPECT_THROW(inpaint(ZeroDenoiser{}, table, Tensor({1, 4, 4}), gen_half(4, 4), cfg), std::invalid_argument);
  EXPECT_THROW(parse_method("ddim"), std::invalid_argument);
}

TEST(Inpaint, NonFiniteStateRaisesNumericError) {
  const auto table = build_schedule(5, 1e-3, 0.1);
  for (auto m : {Method::ddpm, Method::tdpaint, Method::repaint}) {
    SamplerConfig cfg;
    cfg.method = m;
    try {
      inpaint(NanDenoiser{}, table, Tensor({1, 4, 4}), gen_half(4, 4), cfg);
      FAIL() << to_string(m);
    } catch (const NumericError& e) {
      EXPECT_EQ(e.step(), 5);
    }
  }
}

TEST(Ddpm, ClampedByDefault) {
  const auto table = build_schedule(30, 1e-3, 0.2);
  SamplerConfig cfg;
  cfg.method = Method::ddpm;
  auto x = ddpm_sample(ZeroDenoiser{}, table, cfg, {1, 8, 8});
  for (float v : x.data) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

// With the exact denoiser for N(mu, s^2) data, the sample moments match the
// data distribution.
TEST(Ddpm, GaussianDataMomentsRecovered) {
  const auto table = build_schedule(200, 5e-4, 0.1);
  GaussianDenoiser den{&table, 0.3, 0.04};
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (int seed = 0; seed < 40; ++seed) {
    SamplerConfig cfg;
    cfg.method = Method::ddpm;
    cfg.seed = static_cast<std::uint64_t>(seed);
    cfg.clamp_output = false;
    auto x = ddpm_sample(den, table, cfg, {1, 16, 16});
    for (float v : x.data) {
      sum += v;
      sq += static_cast<double>(v) * v;
      ++n;
    }
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.3, 0.01);
  EXPECT_NEAR(var / 0.04, 1.0, 0.05);
}

TEST(TdPaint, GaussianDataMomentsInGeneratedRegion) {
  const auto table = build_schedule(200, 5e-4, 0.1);
  GaussianDenoiser den{&table, -0.2, 0.09};
  Tensor cond({1, 16, 16}, 0.9f);
  const Mask mask = gen_half(16, 16);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (int seed = 0; seed < 40; ++seed) {
    SamplerConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(seed);
    auto x = tdpaint_inpaint(den, table, cond, mask, cfg);
    for (std::size_t p = 0; p < 256; ++p) {
      if (mask.values[p]) continue;
      sum += x[p];
      sq += static_cast<double>(x[p]) * x[p];
      ++n;
    }
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, -0.2, 0.01);
  EXPECT_NEAR(var / 0.09, 1.0, 0.05);
}

TEST(RePaint, PixelwiseAndScalarConditioningAgree) {
  const auto cfg_model = tiny_unet();
  auto params = init_parameters<float>(cfg_model, 3, InitOptions{false, true});
  UNetDenoiser den(params, cfg_model);
  const auto table = build_schedule(8, 1e-3, 0.1);
  Rng rng(4);
  Tensor cond = oracle::random_tensor(rng, {1, 8, 8});
  SamplerConfig a, b;
  a.method = b.method = Method::repaint;
  a.resample_r = b.resample_r = 2;
  a.jump_j = b.jump_j = 2;
  b.conditioning = TimeConditioning::scalar;
  EXPECT_EQ(repaint_inpaint(den, table, cond, gen_half(8, 8), a), repaint_inpaint(den, table, cond, gen_half(8, 8), b));
}

TEST(QualityCurve, LengthOrderAndFinalPoint) {
  const auto table = build_schedule(30, 1e-3, 0.1);
  GaussianDenoiser den{&table, 0.0, 0.25};
  Rng rng(5);
  Tensor gt = oracle::random_tensor(rng, {1, 8, 8});
  for (auto m : {Method::tdpaint, Method::repaint}) {
    SamplerConfig cfg;
    cfg.method = m;
    cfg.resample_r = 3;
    auto curve = quality_vs_step(den, table, gt, gen_half(8, 8), cfg);
    ASSERT_EQ(curve.t.size(), 30u);
    ASSERT_EQ(curve.mse.size(), 30u);
    for (int i = 0; i < 30; ++i) EXPECT_EQ(curve.t[i], 30 - i);
    EXPECT_EQ(curve.final_mse, masked_mse(curve.sample, gt, gen_half(8, 8)));
    EXPECT_NEAR(curve.mse.back(), curve.final_mse, 1e-4 * std::max(1.0, curve.final_mse));
  }
}

TEST(QualityCurve, StepsToConverge) {
  EXPECT_EQ(steps_to_converge({}), 0);
  EXPECT_EQ(steps_to_converge({1.0}), 1);
  EXPECT_EQ(steps_to_converge({5.0, 3.0, 1.05, 0.98, 1.0}), 3);
  EXPECT_EQ(steps_to_converge({1.0, 1.0, 1.0}), 1);
  EXPECT_EQ(steps_to_converge({1.0, 5.0, 1.0, 1.0}), 3);
  EXPECT_EQ(steps_to_converge({2.0, 1.5, 1.0}, 0.6), 2);
}

TEST(Inpaint, TrainedModelBeatsUntrainedOnSingleUnknownPixel) {
  ExperimentConfig cfg;
  cfg.dataset = {ToyKind::gradients, 8, 1, 64, 3};
  cfg.model = tiny_unet();
  cfg.schedule = {50, 1e-3, 0.2};
  cfg.training.steps = 300;
  cfg.training.batch_size = 4;
  cfg.training.lr = 2e-3;
  cfg.training.seed = 2;
  cfg.training.log_interval = 100;
  const auto table = cfg.schedule.build();
  const auto untrained = init_train_state(cfg);
  auto trained = init_train_state(cfg);
  train_loop(cfg, trained, make_toy_dataset(cfg.dataset));
  const UNetDenoiser before(untrained.params, cfg.model), after(trained.params, cfg.model);

  auto sq_error = [&](const UNetDenoiser& net, const Tensor& img, const Mask& mask, std::uint64_t seed) {
    SamplerConfig sc;
    sc.seed = seed;
    try {
      const Tensor out = inpaint(net, table, img, mask, sc);
      double err = 0;
      for (std::size_t p = 0; p < mask.values.size(); ++p)
        if (!mask.values[p]) err += std::pow(out[p] - img[p], 2);
      return err;
    } catch (const NumericError&) {
      return std::numeric_limits<double>::infinity();
    }
  };
  double trained_err = 0, untrained_err = 0;
  for (int i = 0; i < 10; ++i) {
    const Tensor img = make_toy_image({ToyKind::gradients, 8, 1, 64, 77}, i);
    Mask mask(8, 8, 1);
    mask.at(1 + i % 6, 1 + (i * 5) % 6) = 0;
    trained_err += sq_error(after, img, mask, i);
    untrained_err += sq_error(before, img, mask, i);
  }
  EXPECT_TRUE(std::isfinite(trained_err));
  EXPECT_LT(trained_err, untrained_err);
}
