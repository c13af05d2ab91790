#include "ncl/augment.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "ncl/error.hpp"
#include "ncl/io.hpp"

namespace ncl {

namespace {

struct NamedKind {
  std::string_view name;
  TransformKind kind;
};

constexpr NamedKind kKinds[] = {
    {"identity", TransformKind::kIdentity}, {"noise", TransformKind::kNoise}, {"jitter", TransformKind::kJitter},
    {"scale", TransformKind::kScale},       {"crop", TransformKind::kCrop},   {"flip", TransformKind::kFlip},
};

std::string_view name_of(TransformKind kind) {
  for (const auto& k : kKinds) {
    if (k.kind == kind) return k.name;
  }
  return "?";
}

void translate(std::span<double> sample, std::size_t channels, std::size_t height, std::size_t width, long dy,
               long dx) {
  std::vector<double> src(sample.begin(), sample.end());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const long sy = static_cast<long>(y) - dy, sx = static_cast<long>(x) - dx;
        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(height) && sx < static_cast<long>(width);
        sample[(c * height + y) * width + x] =
            inside ? src[(c * height + static_cast<std::size_t>(sy)) * width + static_cast<std::size_t>(sx)] : 0.0;
      }
    }
  }
}

}  // namespace

AugmentationPolicy AugmentationPolicy::parse(std::string_view text) {
  std::vector<Transform> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find(',', start), text.size());
    std::string_view item = text.substr(start, end - start);
    start = end + 1;
    if (item.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::size_t colon = item.find(':');
    const std::string_view name = item.substr(0, colon);
    double param = 0.0;
    if (colon != std::string_view::npos) {
      const std::string_view num = item.substr(colon + 1);
      const auto res = std::from_chars(num.data(), num.data() + num.size(), param);
      require(res.ec == std::errc{} && res.ptr == num.data() + num.size(), ErrorCode::kInvalidArgument,
              "bad augmentation parameter in '" + std::string(item) + "'");
    }
    auto it = std::find_if(std::begin(kKinds), std::end(kKinds), [&](const NamedKind& k) { return k.name == name; });
    require(it != std::end(kKinds), ErrorCode::kInvalidArgument, "unknown augmentation '" + std::string(name) + "'");
    require(param >= 0.0, ErrorCode::kInvalidArgument, "augmentation parameters must be >= 0");
    if (it->kind == TransformKind::kFlip) {
      require(param <= 1.0, ErrorCode::kInvalidArgument, "flip probability must be <= 1");
    }
    if (it->kind != TransformKind::kIdentity) out.push_back({it->kind, param});
    if (end == text.size()) break;
  }
  return AugmentationPolicy(std::move(out));
}

AugmentationPolicy AugmentationPolicy::default_for(std::span<const std::size_t> sample_shape) {
  if (sample_shape.size() == 3) {
    return AugmentationPolicy({{TransformKind::kCrop, 1.0}, {TransformKind::kFlip, 0.5}, {TransformKind::kNoise, 0.1}});
  }
  return AugmentationPolicy({{TransformKind::kJitter, 0.5}});
}

std::string AugmentationPolicy::to_string() const {
  if (transforms_.empty()) return "identity";
  std::string out;
  for (const auto& t : transforms_) {
    if (!out.empty()) out += ',';
    out += std::string(name_of(t.kind)) + ':' + io::format_double(t.param);
  }
  return out;
}

bool AugmentationPolicy::is_identity() const { return transforms_.empty(); }

void AugmentationPolicy::apply(std::span<double> sample, std::span<const std::size_t> shape, Rng& rng) const {
  const bool image = shape.size() == 3;
  for (const auto& t : transforms_) {
    switch (t.kind) {
      case TransformKind::kIdentity:
        break;
      case TransformKind::kNoise:
      case TransformKind::kJitter:
        for (double& v : sample) v += t.param * rng.normal();
        break;
      case TransformKind::kScale: {
        const double s = 1.0 + t.param * rng.normal();
        for (double& v : sample) v *= s;
        break;
      }
      case TransformKind::kCrop: {
        require(image, ErrorCode::kInvalidArgument, "crop augmentation needs image samples");
        const auto pad = static_cast<std::uint64_t>(t.param);
        const long dy = static_cast<long>(rng.uniform_index(2 * pad + 1)) - static_cast<long>(pad);
        const long dx = static_cast<long>(rng.uniform_index(2 * pad + 1)) - static_cast<long>(pad);
        if (dy != 0 || dx != 0) translate(sample, shape[0], shape[1], shape[2], dy, dx);
        break;
      }
      case TransformKind::kFlip: {
        require(image, ErrorCode::kInvalidArgument, "flip augmentation needs image samples");
        if (rng.bernoulli(t.param)) {
          const std::size_t width = shape[2];
          for (std::size_t r = 0; r < shape[0] * shape[1]; ++r) {
            std::reverse(sample.begin() + static_cast<long>(r * width),
                         sample.begin() + static_cast<long>((r + 1) * width));
          }
        }
        break;
      }
    }
  }
}

}  // namespace ncl
