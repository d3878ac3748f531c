#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "random.hpp"
#include "tensor.hpp"

namespace tdpaint {

enum class ToyKind { gaussian_blobs, gradients, checker_textures };

inline std::string_view to_string(ToyKind k) {
  switch (k) {
    case ToyKind::gaussian_blobs: return "gaussian_blobs";
    case ToyKind::gradients: return "gradients";
    case ToyKind::checker_textures: return "checker_textures";
  }
  return "?";
}

inline ToyKind parse_toy_kind(std::string_view s) {
  if (s == "gaussian_blobs") return ToyKind::gaussian_blobs;
  if (s == "gradients") return ToyKind::gradients;
  if (s == "checker_textures") return ToyKind::checker_textures;
  throw std::invalid_argument("unknown dataset kind '" + std::string(s) +
                              "' (valid: gaussian_blobs, gradients, checker_textures)");
}

struct ToyDatasetSpec {
  ToyKind kind = ToyKind::gaussian_blobs;
  int image_side = 16;
  int channels = 1;
  int count = 1024;
  std::uint64_t seed = 0;

  friend bool operator==(const ToyDatasetSpec&, const ToyDatasetSpec&) = default;
};

/// Image `index` of the dataset; depends only on (kind, side, channels, seed, index).
inline Tensor make_toy_image(const ToyDatasetSpec& spec, int index) {
  const int n = spec.image_side, c = spec.channels;
  Rng rng = Rng::stream(spec.seed, to_string(spec.kind), static_cast<std::uint64_t>(index));
  Tensor img(Shape{c, n, n});
  const double pi = 3.14159265358979323846;
  switch (spec.kind) {
    case ToyKind::gaussian_blobs: {
      std::fill(img.data.begin(), img.data.end(), -1.0f);
      const int blobs = rng.uniform_int(1, 3);
      for (int b = 0; b < blobs; ++b) {
        const double cy = rng.uniform(0.0, n - 1.0), cx = rng.uniform(0.0, n - 1.0);
        const double sigma = rng.uniform(n / 10.0, n / 4.0);
        std::vector<double> amp(static_cast<std::size_t>(c));
        for (auto& a : amp) a = rng.uniform(0.5, 1.0);
        for (int ch = 0; ch < c; ++ch)
          for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
              const double r2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
              img.at(ch, y, x) += static_cast<float>(2.0 * amp[ch] * std::exp(-r2 / (2 * sigma * sigma)));
            }
      }
      break;
    }
    case ToyKind::gradients: {
      const double angle = rng.uniform(0.0, 2 * pi);
      const double strength = rng.uniform(0.6, 1.6);
      const double a = strength * std::cos(angle), b = strength * std::sin(angle);
      for (int ch = 0; ch < c; ++ch) {
        const double offset = rng.uniform(-0.2, 0.2);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            const double u = n > 1 ? static_cast<double>(x) / (n - 1) - 0.5 : 0.0;
            const double v = n > 1 ? static_cast<double>(y) / (n - 1) - 0.5 : 0.0;
            img.at(ch, y, x) = static_cast<float>(offset + a * u + b * v);
          }
      }
      break;
    }
    case ToyKind::checker_textures: {
      const double fy = rng.uniform(1.0, 3.0) * 2 * pi / n, fx = rng.uniform(1.0, 3.0) * 2 * pi / n;
      const double py = rng.uniform(0.0, 2 * pi), px = rng.uniform(0.0, 2 * pi);
      for (int ch = 0; ch < c; ++ch) {
        const double amp = rng.uniform(0.5, 0.9);
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x)
            img.at(ch, y, x) = static_cast<float>(amp * std::tanh(3.0 * std::sin(fy * y + py) * std::sin(fx * x + px)));
      }
      break;
    }
  }
  for (float& v : img.data) v = std::clamp(v, -1.0f, 1.0f);
  return img;
}

/// Structured c x n x n images in [-1, 1].
inline std::vector<Tensor> make_toy_dataset(const ToyDatasetSpec& spec) {
  if (spec.count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (spec.image_side < 1 || spec.channels < 1) throw std::invalid_argument("dataset dimensions must be >= 1");
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) out.push_back(make_toy_image(spec, i));
  return out;
}

}  // namespace tdpaint
