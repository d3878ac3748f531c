#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "tensor.hpp"

namespace tdpaint {

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

/// Seeded random stream. Every consumer derives its own stream from
/// (seed, label, index) so that results never depend on call order across
/// workers or on where a run was resumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng stream(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
    const std::uint64_t tag = fnv1a(label);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    Rng r(0);
    r.engine_.seed(seq);
    return r;
  }

  float normal() { return normal_(engine_); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  // Inclusive on both ends.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(engine_); }

  Tensor normal_tensor(const Shape& shape) {
    Tensor t(shape);
    for (float& v : t.data) v = normal();
    return t;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<float> normal_{0.0f, 1.0f};
};

}  // namespace tdpaint
