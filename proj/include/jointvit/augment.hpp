#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "jointvit/dataset.hpp"
#include "jointvit/random.hpp"

namespace jointvit {

/// Random crop (side-length fraction) -> bilinear resize back -> horizontal
/// flip -> rotation about the image center with bilinear sampling.
struct AugmentPolicy {
  double crop_scale_min = 0.875;
  double crop_scale_max = 1.0;
  double hflip_prob = 0.5;
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 360.0;
  double fill = 0.0;

  /// No-op policy: full crop, no flip, zero rotation.
  static AugmentPolicy identity() { return AugmentPolicy{1.0, 1.0, 0.0, 0.0, 0.0, 0.0}; }

  void validate() const {
    require(crop_scale_min > 0.0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1.0,
            ErrorKind::Policy, "crop scale range must satisfy 0 < min <= max <= 1");
    require(hflip_prob >= 0.0 && hflip_prob <= 1.0, ErrorKind::Policy,
            "flip probability must lie in [0, 1]");
    require(rotation_min_deg <= rotation_max_deg, ErrorKind::Policy,
            "rotation range must satisfy min <= max");
  }
};

namespace detail {

inline void require_image(const Tensor& img, const char* op) {
  require(img.rank() == 3, ErrorKind::Dimension,
          std::string(op) + ": expected H x W x C image, got " + shape_string(img.shape()));
}

// Snaps coordinates that are integral up to roundoff, so that quarter-turn
// rotations sample pixels exactly.
inline double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

/// Bilinear sample at (y, x); neighbours outside the image contribute `fill`.
inline double sample_bilinear(const Tensor& img, double y, double x, std::size_t ch,
                              double fill) {
  const auto h = static_cast<long>(img.dim(0)), w = static_cast<long>(img.dim(1));
  const std::size_t c = img.dim(2);
  const double fy = std::floor(y), fx = std::floor(x);
  const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
  const double dy = y - fy, dx = x - fx;
  auto px = [&](long yy, long xx) {
    if (yy < 0 || yy >= h || xx < 0 || xx >= w) return fill;
    return img[(static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) +
                static_cast<std::size_t>(xx)) * c + ch];
  };
  double v = 0.0;
  if ((1 - dy) * (1 - dx) != 0.0) v += (1 - dy) * (1 - dx) * px(y0, x0);
  if ((1 - dy) * dx != 0.0) v += (1 - dy) * dx * px(y0, x0 + 1);
  if (dy * (1 - dx) != 0.0) v += dy * (1 - dx) * px(y0 + 1, x0);
  if (dy * dx != 0.0) v += dy * dx * px(y0 + 1, x0 + 1);
  return v;
}

}  // namespace detail

/// Bilinear resize with half-pixel centers and edge clamping.
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  detail::require_image(img, "resize_bilinear");
  require(out_h > 0 && out_w > 0, ErrorKind::Dimension, "resize_bilinear: empty target size");
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  if (h == out_h && w == out_w) return img;
  Tensor out({out_h, out_w, c});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double src_y = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                    static_cast<double>(h - 1));
    for (std::size_t x = 0; x < out_w; ++x) {
      const double src_x = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                      static_cast<double>(w - 1));
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * out_w + x) * c + ch] = detail::sample_bilinear(img, src_y, src_x, ch, 0.0);
    }
  }
  return out;
}

inline Tensor crop(const Tensor& img, std::size_t top, std::size_t left, std::size_t height,
                   std::size_t width) {
  detail::require_image(img, "crop");
  require(height > 0 && width > 0 && top + height <= img.dim(0) && left + width <= img.dim(1),
          ErrorKind::Dimension, "crop: window outside image " + shape_string(img.shape()));
  const std::size_t w = img.dim(1), c = img.dim(2);
  Tensor out({height, width, c});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * width + x) * c + ch] = img[((top + y) * w + left + x) * c + ch];
  return out;
}

inline Tensor hflip(const Tensor& img) {
  detail::require_image(img, "hflip");
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  Tensor out(img.shape());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = img[(y * w + (w - 1 - x)) * c + ch];
  return out;
}

/// Counter-clockwise rotation by `degrees` about the image center.
inline Tensor rotate(const Tensor& img, double degrees, double fill) {
  detail::require_image(img, "rotate");
  const std::size_t h = img.dim(0), w = img.dim(1), c = img.dim(2);
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  Tensor out(img.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double ry = static_cast<double>(y) - cy, rx = static_cast<double>(x) - cx;
      // inverse map: rotate the output coordinate by -theta
      const double sx = detail::snap(cx + cs * rx - sn * ry);
      const double sy = detail::snap(cy + sn * rx + cs * ry);
      for (std::size_t ch = 0; ch < c; ++ch)
        out[(y * w + x) * c + ch] = detail::sample_bilinear(img, sy, sx, ch, fill);
    }
  }
  return out;
}

/// Draws crop scale, crop position, flip and angle (in that order) from
/// `rng` and applies them. Output shape equals input shape.
inline Tensor augment_once(const Tensor& image, const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  detail::require_image(image, "augment_once");
  const std::size_t h = image.dim(0), w = image.dim(1);
  require(h >= 8 && w >= 8, ErrorKind::Dimension,
          "augment_once: image must be at least 8x8, got " + shape_string(image.shape()));

  const double s = policy.crop_scale_min == policy.crop_scale_max
                       ? policy.crop_scale_min
                       : uniform(rng, policy.crop_scale_min, policy.crop_scale_max);
  const auto ch = static_cast<std::size_t>(std::lround(s * static_cast<double>(h)));
  const auto cw = static_cast<std::size_t>(std::lround(s * static_cast<double>(w)));
  require(ch >= 1 && cw >= 1, ErrorKind::Policy, "augment_once: crop window below one pixel");
  const std::size_t top = uniform_index(rng, h - ch + 1);
  const std::size_t left = uniform_index(rng, w - cw + 1);
  const bool flip = uniform01(rng) < policy.hflip_prob;
  const double angle = policy.rotation_min_deg == policy.rotation_max_deg
                           ? policy.rotation_min_deg
                           : uniform(rng, policy.rotation_min_deg, policy.rotation_max_deg);

  Tensor out = (ch == h && cw == w) ? image : resize_bilinear(crop(image, top, left, ch, cw), h, w);
  if (flip) out = hflip(out);
  if (std::fmod(angle, 360.0) != 0.0) out = rotate(out, angle, policy.fill);
  return out;
}

/// Augments every slice of `source` with one rng stream keyed by
/// (seed, source id, copy index).
inline LabeledInstance augmented_copy(const LabeledInstance& source, const AugmentPolicy& policy,
                                      std::uint64_t seed, std::size_t copy_index) {
  Rng rng = stream_rng(seed, source.instance_id, copy_index);
  LabeledInstance copy;
  copy.instance_id = source.instance_id + "~aug" + std::to_string(copy_index);
  copy.source_id = source.source_id;
  copy.sao2_percent = source.sao2_percent;
  copy.sao2_class = source.sao2_class;
  copy.is_augmented = true;
  copy.slices.reserve(source.slices.size());
  for (const Tensor& s : source.slices) copy.slices.push_back(augment_once(s, policy, rng));
  return copy;
}

/// Upsamples every minority class with augmented copies until each class
/// matches the majority count. Originals are kept unchanged and come first;
/// sources within a class are used round-robin.
inline Dataset balance_augment(const Dataset& dataset, const AugmentPolicy& policy,
                               std::uint64_t seed) {
  policy.validate();
  const ClassCounts& counts = dataset.class_counts();
  for (std::size_t c = 0; c < kNumSaO2Classes; ++c) {
    require(counts[c] > 0, ErrorKind::Balance,
            "cannot balance: class '" + std::string(class_name(static_cast<SaO2Class>(c))) +
                "' has no instances");
  }
  const std::size_t majority = *std::max_element(counts.begin(), counts.end());

  std::vector<LabeledInstance> out(dataset.instances());
  std::set<std::string> taken;
  for (const auto& inst : out) taken.insert(inst.instance_id);
  std::map<std::string, std::size_t> next_copy;  // per source, skipping ids already in use
  bool added = false;
  for (std::size_t c = 0; c < kNumSaO2Classes; ++c) {
    std::vector<const LabeledInstance*> members;
    for (const auto& inst : dataset.instances())
      if (static_cast<std::size_t>(inst.label()) == c) members.push_back(&inst);
    for (std::size_t j = 0; counts[c] + j < majority; ++j) {
      const LabeledInstance& src = *members[j % members.size()];
      std::size_t& k = next_copy[src.instance_id];
      while (taken.contains(src.instance_id + "~aug" + std::to_string(k))) ++k;
      out.push_back(augmented_copy(src, policy, seed, k++));
      taken.insert(out.back().instance_id);
      added = true;
    }
  }
  return Dataset(std::move(out), added ? Provenance::Augmented : dataset.provenance());
}

}  // namespace jointvit
