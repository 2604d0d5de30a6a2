#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include "jointvit/dataset.hpp"
#include "jointvit/random.hpp"

namespace jointvit {

/// Class signal planted in synthetic images.
///  - Stripes: oriented sinusoidal stripes, one orientation/frequency per class,
///    random phase, additive Gaussian noise.
///  - Marker: a bright square at a class-specific corner over a noisy background.
enum class SynthSignal { Stripes, Marker };

struct SynthSpec {
  ClassCounts counts{9, 30, 18};
  std::size_t image_size = 64;
  std::size_t slices_per_instance = 1;
  std::uint64_t seed = 0;
  SynthSignal signal = SynthSignal::Stripes;
  double noise = 0.1;
  double amplitude = 0.35;

  void validate() const {
    for (auto c : counts) require(c > 0, ErrorKind::Config, "synthetic class counts must be positive");
    require(image_size >= 8, ErrorKind::Config, "synthetic image size must be at least 8");
    require(slices_per_instance >= 1, ErrorKind::Config, "slices_per_instance must be positive");
    require(noise >= 0.0 && amplitude >= 0.0, ErrorKind::Config,
            "noise and amplitude must be non-negative");
  }
};

struct StripePattern {
  double angle_deg;
  double cycles;  // full periods across the image side
};

/// Low: horizontal-running 4 cycles, BorderlineLow: diagonal 6 cycles,
/// Normal: vertical-running 8 cycles.
inline StripePattern stripe_pattern(SaO2Class c) {
  switch (c) {
    case SaO2Class::Low: return {0.0, 4.0};
    case SaO2Class::BorderlineLow: return {45.0, 6.0};
    case SaO2Class::Normal: return {90.0, 8.0};
  }
  return {0.0, 0.0};
}

/// Normalized power of a single-channel image at class `c`'s stripe
/// frequency: 4 |sum (v - mean) exp(-i phase)|^2 / N^2. A pure stripe of
/// amplitude A scores about A^2; uncorrelated noise scores about 4 sigma^2 / N.
inline double stripe_energy(const Tensor& image, SaO2Class c) {
  require(image.rank() == 3 && image.dim(2) == 1, ErrorKind::Dimension,
          "stripe_energy: expected H x W x 1 image");
  const std::size_t h = image.dim(0), w = image.dim(1);
  const auto pattern = stripe_pattern(c);
  const double th = pattern.angle_deg * std::numbers::pi / 180.0;
  const double k = 2.0 * std::numbers::pi * pattern.cycles / static_cast<double>(w);
  double mu = 0.0;
  for (double v : image.data()) mu += v;
  mu /= static_cast<double>(image.size());
  std::complex<double> acc{0.0, 0.0};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double phase = k * (static_cast<double>(x) * std::cos(th) +
                                static_cast<double>(y) * std::sin(th));
      acc += (image[y * w + x] - mu) * std::polar(1.0, -phase);
    }
  const double n = static_cast<double>(image.size());
  return 4.0 * std::norm(acc) / (n * n);
}

namespace detail {

inline Tensor stripe_image(SaO2Class c, const SynthSpec& spec, Rng& rng) {
  const std::size_t s = spec.image_size;
  const auto pattern = stripe_pattern(c);
  const double th = pattern.angle_deg * std::numbers::pi / 180.0;
  const double k = 2.0 * std::numbers::pi * pattern.cycles / static_cast<double>(s);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  Tensor img({s, s, 1});
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      const double t = k * (static_cast<double>(x) * std::cos(th) +
                            static_cast<double>(y) * std::sin(th)) + phase;
      const double v = 0.5 + spec.amplitude * std::sin(t) + spec.noise * standard_normal(rng);
      img[y * s + x] = std::clamp(v, 0.0, 1.0);
    }
  return img;
}

inline Tensor marker_image(SaO2Class c, const SynthSpec& spec, Rng& rng) {
  const std::size_t s = spec.image_size, m = s / 4;
  Tensor img({s, s, 1});
  for (double& v : img.data()) v = std::clamp(0.2 + spec.noise * standard_normal(rng), 0.0, 1.0);
  std::size_t top = 0, left = 0;
  switch (c) {
    case SaO2Class::Low: break;
    case SaO2Class::BorderlineLow: left = s - m; break;
    case SaO2Class::Normal: top = s - m; break;
  }
  for (std::size_t y = top; y < top + m; ++y)
    for (std::size_t x = left; x < left + m; ++x) img[y * s + x] = 1.0;
  return img;
}

}  // namespace detail

/// Long-tailed synthetic dataset with a learnable class signal. Every
/// instance draws from its own rng stream, so the result depends only on
/// the spec.
inline Dataset synth_longtail(const SynthSpec& spec) {
  spec.validate();
  std::vector<LabeledInstance> instances;
  std::size_t serial = 0;
  for (std::size_t c = 0; c < kNumSaO2Classes; ++c) {
    const auto cls = static_cast<SaO2Class>(c);
    const auto [lo, hi] = class_sao2_range(cls);
    for (std::size_t i = 0; i < spec.counts[c]; ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "synth_%04zu", serial++);
      Rng rng = stream_rng(spec.seed, id, 0);
      double percent = uniform(rng, lo, hi);
      while (sao2_to_class(percent) != cls) percent = uniform(rng, lo, hi);
      std::vector<Tensor> slices;
      for (std::size_t sl = 0; sl < spec.slices_per_instance; ++sl) {
        slices.push_back(spec.signal == SynthSignal::Stripes ? detail::stripe_image(cls, spec, rng)
                                                             : detail::marker_image(cls, spec, rng));
      }
      instances.push_back(LabeledInstance::original(id, std::move(slices), percent));
    }
  }
  return Dataset(std::move(instances), Provenance::Synthetic);
}

}  // namespace jointvit
