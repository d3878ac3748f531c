#pragma once

// Per-mask-family evaluation on a held-out toy set.
//
// Perceptual metrics are substituted: masked MSE, PSNR (from masked MSE),
// SSIM (whole image) and a pixel-space diversity proxy (mean pairwise masked
// RMSE) stand in for LPIPS, KID and the LPIPS-based diversity score.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <exception>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "dataset.hpp"
#include "metrics.hpp"
#include "samplers.hpp"
#include "schedule.hpp"
#include "timemap.hpp"

namespace tdpaint {

inline constexpr const char* kMetricSubstitutionNote =
    "masked_mse/psnr/ssim/diversity substitute LPIPS/KID/Diversity-Score; diversity = mean pairwise masked RMSE";

struct EvalOptions {
  SamplerConfig sampler;     // method, resample_r, jump_j; seed is overridden per image
  int n_images = 200;
  std::uint64_t seed = 0;    // eval set, masks and sampler seeds all derive from this
  int diversity_images = 4;  // leading images that get extra samples for the diversity proxy
  int diversity_samples = 3;
  int threads = 1;
};

/// One evaluation case: ground truth, mask, and the sampler seed used for it.
struct EvalCase {
  Tensor image;
  Mask mask;
  std::uint64_t sample_seed = 0;
};

inline ToyDatasetSpec eval_dataset_spec(const ToyDatasetSpec& train, std::uint64_t seed, int n) {
  ToyDatasetSpec s = train;
  s.count = n;
  s.seed = Rng::stream(seed, "eval-set").engine()();
  return s;
}

inline std::uint64_t eval_sample_seed(std::uint64_t seed, MaskFamily family, int index, int replica = 0) {
  return Rng::stream(seed, "eval-sample/" + std::string(to_string(family)) + "/" + std::to_string(replica),
                     static_cast<std::uint64_t>(index))
      .engine()();
}

inline EvalCase eval_case(const ToyDatasetSpec& train, std::uint64_t seed, int n, MaskFamily family, int index) {
  EvalCase c;
  c.image = make_toy_image(eval_dataset_spec(train, seed, n), index);
  Rng mask_rng = Rng::stream(seed, "eval-mask/" + std::string(to_string(family)), static_cast<std::uint64_t>(index));
  c.mask = make_mask(family, mask_rng, height(c.image), width(c.image));
  c.sample_seed = eval_sample_seed(seed, family, index);
  return c;
}

struct EvalRow {
  MaskFamily family = MaskFamily::half;
  double masked_mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double diversity = 0.0;
  long long nfe = 0;
  double wall_ms_mean = 0.0;
};

struct EvalReport {
  std::string method;
  int resample_r = 1;
  int jump_j = 1;
  int T = 0;
  int n_images = 0;
  std::uint64_t seed = 0;
  std::vector<EvalRow> rows;

  /// Deterministic columns only; wall time is in the JSON form.
  std::string to_csv() const {
    std::ostringstream os;
    os << "# " << kMetricSubstitutionNote << "\n";
    os << "mask_family,masked_mse,psnr,ssim,diversity,nfe\n";
    os << std::setprecision(9);
    for (const auto& r : rows)
      os << to_string(r.family) << ',' << r.masked_mse << ',' << r.psnr << ',' << r.ssim << ',' << r.diversity << ','
         << r.nfe << '\n';
    return os.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json out = {{"note", kMetricSubstitutionNote},
                          {"method", method},
                          {"resample_r", resample_r},
                          {"jump_j", jump_j},
                          {"T", T},
                          {"n_images", n_images},
                          {"seed", seed},
                          {"rows", nlohmann::json::array()}};
    for (const auto& r : rows)
      out["rows"].push_back({{"mask_family", to_string(r.family)},
                             {"masked_mse", r.masked_mse},
                             {"psnr", r.psnr},
                             {"ssim", r.ssim},
                             {"diversity", r.diversity},
                             {"nfe", r.nfe},
                             {"wall_ms_mean", r.wall_ms_mean}});
    return out;
  }
};

namespace detail {

/// Runs job(i) for i in [0, n) on up to `threads` workers.
template <class F>
void parallel_for(int n, int threads, F&& job) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace detail

/// Evaluates `denoiser` on `families`. Results are independent of the thread
/// count: each image has its own seeds and aggregation runs in index order.
template <Denoiser D>
EvalReport run_eval(const D& denoiser, const ScheduleTable& table, const ToyDatasetSpec& train_spec,
                    const std::vector<MaskFamily>& families, const EvalOptions& opt) {
  if (opt.n_images < 1) throw std::invalid_argument("n_images must be >= 1");
  opt.sampler.validate();
  EvalReport report;
  report.method = std::string(to_string(opt.sampler.method));
  report.resample_r = opt.sampler.resample_r;
  report.jump_j = opt.sampler.jump_j;
  report.T = table.T;
  report.n_images = opt.n_images;
  report.seed = opt.seed;
  const long long nfe = nfe_count(opt.sampler.method, table.T, opt.sampler.resample_r, opt.sampler.jump_j);

  for (MaskFamily family : families) {
    struct PerImage {
      double mse = 0, psnr = 0, ssim = 0, diversity = 0, wall_ms = 0;
      bool has_diversity = false;
    };
    std::vector<PerImage> res(static_cast<std::size_t>(opt.n_images));
    detail::parallel_for(opt.n_images, opt.threads, [&](int i) {
      const EvalCase c = eval_case(train_spec, opt.seed, opt.n_images, family, i);
      SamplerConfig sc = opt.sampler;
      sc.seed = c.sample_seed;
      const auto t0 = std::chrono::steady_clock::now();
      Tensor out = inpaint(denoiser, table, c.image, c.mask, sc);
      const auto t1 = std::chrono::steady_clock::now();
      PerImage& r = res[static_cast<std::size_t>(i)];
      r.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      r.mse = masked_mse(out, c.image, c.mask);
      r.psnr = psnr_from_mse(r.mse);
      r.ssim = ssim(out, c.image);
      if (i < opt.diversity_images && opt.diversity_samples >= 2) {
        std::vector<Tensor> samples{out};
        for (int k = 1; k < opt.diversity_samples; ++k) {
          sc.seed = eval_sample_seed(opt.seed, family, i, k);
          samples.push_back(inpaint(denoiser, table, c.image, c.mask, sc));
        }
        r.diversity = diversity_proxy(samples, c.mask);
        r.has_diversity = true;
      }
    });
    EvalRow row;
    row.family = family;
    row.nfe = nfe;
    int div_n = 0;
    for (const auto& r : res) {
      row.masked_mse += r.mse;
      row.psnr += r.psnr;
      row.ssim += r.ssim;
      row.wall_ms_mean += r.wall_ms;
      if (r.has_diversity) {
        row.diversity += r.diversity;
        ++div_n;
      }
    }
    const double n = opt.n_images;
    row.masked_mse /= n;
    row.psnr /= n;
    row.ssim /= n;
    row.wall_ms_mean /= n;
    if (div_n) row.diversity /= div_n;
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace tdpaint
