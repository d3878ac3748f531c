#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tensor.hpp"
#include "timemap.hpp"

namespace tdpaint {

/// Mean squared error over the unknown (mask = 0) pixels, all channels.
inline double masked_mse(const Tensor& pred, const Tensor& target, const Mask& mask) {
  require_same_shape(pred, target, "masked_mse");
  require_image(pred, "masked_mse");
  if (mask.height != height(pred) || mask.width != width(pred))
    throw std::invalid_argument("masked_mse: mask does not match image " + shape_string(pred.shape));
  if (mask.all_known()) throw std::invalid_argument("masked_mse: mask has no unknown pixels");
  const std::size_t plane = mask.values.size();
  double acc = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < channels(pred); ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      if (mask.values[p]) continue;
      const double d = static_cast<double>(pred[c * plane + p]) - target[c * plane + p];
      acc += d * d;
      ++n;
    }
  return acc / static_cast<double>(n);
}

/// PSNR in dB for images in [-1, 1] (peak-to-peak range 2).
inline double psnr_from_mse(double mse, double data_range = 2.0) {
  if (mse <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

struct SsimResult {
  double ssim = 0.0;
  double luminance = 0.0;
  double contrast = 0.0;
  double structure = 0.0;
};

/// Mean local SSIM over all fully contained 7x7 uniform windows, averaged
/// over channels. Constants K1 = 0.01, K2 = 0.03 with data range 2 and
/// unbiased (N - 1) window covariances. Window sums come from summed-area
/// tables.
inline SsimResult ssim_components(const Tensor& pred, const Tensor& target, int window = 7, double data_range = 2.0) {
  require_same_shape(pred, target, "ssim");
  require_image(pred, "ssim");
  const int c = channels(pred), h = height(pred), w = width(pred);
  if (h < window || w < window)
    throw std::invalid_argument("ssim: image " + shape_string(pred.shape) + " smaller than window " +
                                std::to_string(window));
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double c3 = c2 / 2.0;
  const double n = static_cast<double>(window) * window;
  const double cov_norm = n / (n - 1.0);
  const int H = h + 1, W = w + 1;

  SsimResult total;
  for (int ch = 0; ch < c; ++ch) {
    // Summed-area tables of x, y, x^2, y^2, xy.
    std::vector<double> sx(static_cast<std::size_t>(H) * W, 0.0), sy(sx), sxx(sx), syy(sx), sxy(sx);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double a = pred.at(ch, y, x), b = target.at(ch, y, x);
        const std::size_t i = static_cast<std::size_t>(y + 1) * W + (x + 1);
        const std::size_t up = i - W, left = i - 1, diag = i - W - 1;
        sx[i] = a + sx[up] + sx[left] - sx[diag];
        sy[i] = b + sy[up] + sy[left] - sy[diag];
        sxx[i] = a * a + sxx[up] + sxx[left] - sxx[diag];
        syy[i] = b * b + syy[up] + syy[left] - syy[diag];
        sxy[i] = a * b + sxy[up] + sxy[left] - sxy[diag];
      }
    auto box = [&](const std::vector<double>& s, int y0, int x0) {
      const int y1 = y0 + window, x1 = x0 + window;
      return s[static_cast<std::size_t>(y1) * W + x1] - s[static_cast<std::size_t>(y0) * W + x1] -
             s[static_cast<std::size_t>(y1) * W + x0] + s[static_cast<std::size_t>(y0) * W + x0];
    };
    double acc = 0.0, lum = 0.0, con = 0.0, str = 0.0;
    int count = 0;
    for (int y = 0; y + window <= h; ++y)
      for (int x = 0; x + window <= w; ++x) {
        const double mx = box(sx, y, x) / n, my = box(sy, y, x) / n;
        const double vx = std::max(0.0, cov_norm * (box(sxx, y, x) / n - mx * mx));
        const double vy = std::max(0.0, cov_norm * (box(syy, y, x) / n - my * my));
        const double cxy = cov_norm * (box(sxy, y, x) / n - mx * my);
        const double l = (2 * mx * my + c1) / (mx * mx + my * my + c1);
        const double cs = (2 * cxy + c2) / (vx + vy + c2);
        const double sdx = std::sqrt(vx), sdy = std::sqrt(vy);
        acc += l * cs;
        lum += l;
        con += (2 * sdx * sdy + c2) / (vx + vy + c2);
        str += (cxy + c3) / (sdx * sdy + c3);
        ++count;
      }
    total.ssim += acc / count;
    total.luminance += lum / count;
    total.contrast += con / count;
    total.structure += str / count;
  }
  total.ssim /= c;
  total.luminance /= c;
  total.contrast /= c;
  total.structure /= c;
  return total;
}

inline double ssim(const Tensor& pred, const Tensor& target) { return ssim_components(pred, target).ssim; }

/// Mean over sample pairs of the RMSE restricted to unknown pixels.
inline double diversity_proxy(const std::vector<Tensor>& samples, const Mask& mask) {
  if (samples.size() < 2) throw std::invalid_argument("diversity_proxy: need at least 2 samples");
  double acc = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      acc += std::sqrt(masked_mse(samples[i], samples[j], mask));
      ++pairs;
    }
  return acc / pairs;
}

}  // namespace tdpaint
