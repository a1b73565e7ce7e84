#pragma once

// Procedural 10-class 32x32 dataset in the CIFAR-10 record layout, for demos
// and desk-scale experiments. Every class has a distinct luminance pattern;
// chroma carries a class-correlated two-hue palette with spatial structure,
// so both grayscale shape and color are informative. A small fraction of
// washed-out (near-gray) variants keeps grayscale inputs in-distribution.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "chromaflow/color.hpp"
#include "chromaflow/image.hpp"
#include "chromaflow/rng.hpp"

namespace chromaflow::synth {

struct SynthOptions {
  int size = 32;
  double gray_fraction = 0.12;        // washed-out variants (excluded by the filter)
  double weak_contrast_fraction = 0.08;  // low luminance contrast, color does the work
  double sat_lo = 0.14;
  double sat_hi = 0.30;
  double y_noise = 0.03;
  double uv_noise = 0.012;
  double hue_jitter = 0.25;
  // smooth spatial modulation of saturation and hue; gives chroma gradients
  // inside otherwise flat color regions
  double sat_mod = 0.45;
  double hue_mod = 0.50;
};

namespace detail {

// Soft edge over ~1.5 px; d is signed distance, positive inside.
inline double edge(double d) { return std::min(1.0, std::max(0.0, 0.5 + d / 1.5)); }

inline double stripe(double t, double period, double phase) {
  double x = std::fmod(t + phase, period);
  if (x < 0) x += period;
  const double dist = std::abs(x - period * 0.5);
  return edge(period * 0.25 - dist);
}

struct PatternParams {
  double p1, p2, ci, cj, r0;
};

inline PatternParams draw_params(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> phase(0.0, 16.0);
  std::uniform_real_distribution<double> center(n * 0.32, n * 0.68);
  std::uniform_real_distribution<double> radius(7.0, 10.5);
  return {phase(rng), phase(rng), center(rng), center(rng), radius(rng)};
}

// Class-k pattern mask in [0,1] at pixel (i,j).
inline double pattern_mask(int k, double i, double j, int n, const PatternParams& pp) {
  const double ci = pp.ci, cj = pp.cj, r0 = pp.r0, p1 = pp.p1, p2 = pp.p2;
  switch (k) {
    case 0: return stripe(i, 8.0, p1);
    case 1: return stripe(j, 8.0, p1);
    case 2: return stripe((i + j) * 0.70710678, 8.0, p1);
    case 3: return stripe((i - j) * 0.70710678, 8.0, p1);
    case 4: {
      const double sx = stripe(i, 12.0, p1), sy = stripe(j, 12.0, p2);
      return sx * sy + (1.0 - sx) * (1.0 - sy);
    }
    case 5: return edge(r0 - std::hypot(i - ci, j - cj));
    case 6: return edge(3.0 - std::abs(std::hypot(i - ci, j - cj) - r0));
    case 7:
      return std::max(edge(2.5 - std::abs(i - ci)), edge(2.5 - std::abs(j - cj)));
    case 8: {
      const double half = 7.5;
      const double din = std::min(std::min(i - (ci - half), (ci + half) - i),
                                  std::min(j - (cj - half), (cj + half) - j));
      return edge(din);
    }
    default: {
      const double d1 = std::hypot(i - ci, j - cj);
      const double d2 = std::hypot(i - (n - 1 - ci), j - (n - 1 - cj));
      return std::min(1.0, std::exp(-d1 * d1 / 18.0) + std::exp(-d2 * d2 / 18.0));
    }
  }
}

}  // namespace detail

inline LabeledImage make_example(int klass, std::uint64_t seed, const SynthOptions& opt = {}) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int n = opt.size;

  const auto pp = detail::draw_params(n, rng);

  // luminance band
  std::uniform_real_distribution<double> base_d(0.15, 0.45);
  const bool weak = unit(rng) < opt.weak_contrast_fraction;
  std::uniform_real_distribution<double> contrast_d(weak ? 0.10 : 0.30, weak ? 0.20 : 0.50);
  const double ylo = base_d(rng);
  const double yhi = ylo + contrast_d(rng);

  // palette: class-anchored foreground hue, roughly opposite background hue
  const bool washed = unit(rng) < opt.gray_fraction;
  std::uniform_real_distribution<double> sat_d(opt.sat_lo, opt.sat_hi);
  const double sat = washed ? unit(rng) * 0.02 : sat_d(rng);
  const double hue_fg = 2.0 * M_PI * klass / 10.0 + gauss(rng) * opt.hue_jitter;
  const double hue_bg = hue_fg + M_PI + gauss(rng) * 0.30;
  const double ufg = sat * std::cos(hue_fg), vfg = sat * std::sin(hue_fg);
  const double ubg = sat * std::cos(hue_bg), vbg = sat * std::sin(hue_bg);

  // smooth chroma modulation field
  std::uniform_real_distribution<double> dirc(0.5, 2.5);
  const double smi = dirc(rng), smj = dirc(rng), sphase = unit(rng) * 2.0 * M_PI;
  const double hmi = dirc(rng), hmj = dirc(rng), hphase = unit(rng) * 2.0 * M_PI;
  const double samp = opt.sat_mod * unit(rng);
  const double hamp = opt.hue_mod * unit(rng);

  YuvImage yuv(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const std::size_t p = static_cast<std::size_t>(i) * n + j;
      const double m = detail::pattern_mask(klass, i, j, n, pp);
      double y = ylo + (yhi - ylo) * m + gauss(rng) * opt.y_noise;
      yuv.y[p] = std::min(0.97, std::max(0.02, y));
      double u = ubg + (ufg - ubg) * m;
      double v = vbg + (vfg - vbg) * m;
      const double scale =
          1.0 + samp * std::sin(2.0 * M_PI * (smi * i + smj * j) / n + sphase);
      const double rot = hamp * std::sin(2.0 * M_PI * (hmi * i + hmj * j) / n + hphase);
      const double cr = std::cos(rot), sr = std::sin(rot);
      yuv.u[p] = scale * (cr * u - sr * v) + gauss(rng) * opt.uv_noise;
      yuv.v[p] = scale * (sr * u + cr * v) + gauss(rng) * opt.uv_noise;
    }

  LabeledImage rec;
  rec.label = klass;
  rec.image = tensor_to_image(image_to_tensor(yuv_to_rgb(gamut_project(yuv))));
  return rec;
}

// Balanced dataset of n examples (class = index mod 10), ids "synth#<i>".
inline std::vector<LabeledImage> generate(std::size_t n, std::uint64_t seed,
                                          const SynthOptions& opt = {}) {
  std::vector<LabeledImage> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    LabeledImage rec = make_example(static_cast<int>(i % 10), mix_seed(seed, i), opt);
    rec.id = "synth#" + std::to_string(i);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace chromaflow::synth
