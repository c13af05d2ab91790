#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ncl/rng.hpp"

namespace ncl {

enum class TransformKind {
  kIdentity,
  kNoise,   // additive Gaussian, stddev = param
  kJitter,  // vector data: additive Gaussian, stddev = param
  kScale,   // multiply the whole sample by 1 + N(0, param)
  kCrop,    // images: translate by up to param pixels, zero fill
  kFlip,    // images: horizontal flip with probability param
};

struct Transform {
  TransformKind kind = TransformKind::kIdentity;
  double param = 0.0;
};

// Ordered list of parameterized transforms applied to one sample. Text form:
// comma-separated `name:param`, e.g. "crop:2,flip:0.5,noise:0.1" or "identity".
class AugmentationPolicy {
 public:
  AugmentationPolicy() = default;
  explicit AugmentationPolicy(std::vector<Transform> transforms) : transforms_(std::move(transforms)) {}

  static AugmentationPolicy parse(std::string_view text);
  static AugmentationPolicy identity() { return {}; }
  // Jitter for vector data; crop + flip + noise for images.
  static AugmentationPolicy default_for(std::span<const std::size_t> sample_shape);

  std::string to_string() const;
  bool is_identity() const;
  std::span<const Transform> transforms() const noexcept { return transforms_; }

  void apply(std::span<double> sample, std::span<const std::size_t> sample_shape, Rng& rng) const;

 private:
  std::vector<Transform> transforms_;
};

}  // namespace ncl
