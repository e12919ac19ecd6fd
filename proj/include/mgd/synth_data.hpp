#pragma once

// Procedural image-classification data: every class is an oriented grating
// with its own orientation, spatial frequency and phase. Samples add a phase
// jitter and Gaussian pixel noise, both proportional to noise_sigma, and are
// clamped to [-1, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "mgd/tensor.hpp"

namespace mgd {

struct SynthSpec {
  std::size_t n_classes = 8;
  std::size_t samples_per_class = 60;
  std::size_t image_size = 16;
  double noise_sigma = 0.35;
  std::uint64_t seed = 0;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

struct Dataset {
  std::vector<FeatureMap> images;  // 1 x (image_size^2)
  std::vector<std::size_t> labels;
  std::size_t image_size = 0;
  std::size_t n_classes = 0;

  std::size_t size() const noexcept { return images.size(); }
};

inline void validate(const SynthSpec& spec) {
  if (spec.n_classes < 2) throw ValueError("SynthSpec: n_classes must be >= 2");
  if (spec.samples_per_class == 0) throw ValueError("SynthSpec: samples_per_class must be > 0");
  if (spec.image_size < 4) throw ValueError("SynthSpec: image_size must be >= 4");
  if (!(spec.noise_sigma >= 0.0) || !std::isfinite(spec.noise_sigma)) {
    throw ValueError("SynthSpec: noise_sigma must be finite and >= 0");
  }
}

namespace detail {

inline constexpr double kAmplitude = 0.2;

struct GratingClass {
  double kx, ky, phase;
};

inline GratingClass grating_for(std::size_t c, std::size_t n_classes, std::size_t side) {
  const double theta = std::numbers::pi * double(c) / double(n_classes);
  const double cycles = c % 2 == 0 ? 2.5 : 3.5;
  const double w = 2.0 * std::numbers::pi * cycles / double(side);
  return {w * std::cos(theta), w * std::sin(theta), 0.37 * double(c)};
}

}  // namespace detail

// Samples are interleaved by class (sample s has label s % n_classes), so
// classes are exactly balanced.
inline Dataset generate(const SynthSpec& spec) {
  validate(spec);
  const std::size_t side = spec.image_size;
  const double jitter = std::numbers::pi * std::min(1.0, 3.0 * spec.noise_sigma);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  Dataset data;
  data.image_size = side;
  data.n_classes = spec.n_classes;
  const std::size_t total = spec.n_classes * spec.samples_per_class;
  data.images.reserve(total);
  data.labels.reserve(total);
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t label = s % spec.n_classes;
    const auto g = detail::grating_for(label, spec.n_classes, side);
    const double phase = g.phase + jitter * unit(rng);
    FeatureMap img(1, side * side);
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        double v = detail::kAmplitude * std::cos(g.kx * double(x) + g.ky * double(y) + phase);
        v += spec.noise_sigma * noise(rng);
        img(0, y * side + x) = std::clamp(v, -1.0, 1.0);
      }
    }
    data.images.push_back(std::move(img));
    data.labels.push_back(label);
  }
  return data;
}

struct DataSplit {
  Dataset train;
  Dataset val;
};

// Stratified split: per class, a seeded shuffle sends the first
// round(val_fraction * count) samples to validation.
inline DataSplit split(const Dataset& data, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) {
    throw ValueError("split: val_fraction must be in [0, 1)");
  }
  std::vector<std::vector<std::size_t>> by_class(data.n_classes);
  for (std::size_t s = 0; s < data.size(); ++s) by_class.at(data.labels[s]).push_back(s);
  std::mt19937_64 rng(seed ^ 0x5eed5eed5eedULL);
  std::vector<char> is_val(data.size(), 0);
  for (auto& idx : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * double(idx.size())));
    for (std::size_t k = 0; k < n_val; ++k) is_val[idx[k]] = 1;
  }
  DataSplit out;
  for (Dataset* d : {&out.train, &out.val}) {
    d->image_size = data.image_size;
    d->n_classes = data.n_classes;
  }
  for (std::size_t s = 0; s < data.size(); ++s) {
    Dataset& dst = is_val[s] ? out.val : out.train;
    dst.images.push_back(data.images[s]);
    dst.labels.push_back(data.labels[s]);
  }
  return out;
}

struct PixelStats {
  double mean = 0.0;
  double stddev = 1.0;
};

// Pixel mean and standard deviation over a whole dataset.
inline PixelStats pixel_stats(const Dataset& data) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& img : data.images) {
    for (double v : img.values()) {
      sum += v;
      sq += v * v;
    }
    n += img.size();
  }
  if (n == 0) throw ValueError("pixel_stats: empty dataset");
  PixelStats st;
  st.mean = sum / double(n);
  const double var = sq / double(n) - st.mean * st.mean;
  st.stddev = var > 0.0 ? std::sqrt(var) : 1.0;
  return st;
}

// Shifts and scales both halves with the training-set statistics, so inputs
// have zero mean and unit variance. Returns the statistics used.
inline PixelStats standardize(DataSplit& data) {
  const PixelStats st = pixel_stats(data.train);
  const double inv = 1.0 / st.stddev;
  for (Dataset* d : {&data.train, &data.val}) {
    for (auto& img : d->images) {
      for (double& v : img.values()) v = (v - st.mean) * inv;
    }
  }
  return st;
}

}  // namespace mgd
