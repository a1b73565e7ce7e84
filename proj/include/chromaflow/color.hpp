#pragma once

#include <array>
#include <cmath>

#include "chromaflow/image.hpp"
#include "chromaflow/tensor.hpp"

namespace chromaflow {

// BT.470 System M RGB -> YUV matrix.
inline constexpr double kRgbToYuv[3][3] = {
    {0.299, 0.587, 0.114},
    {-0.14713, -0.28886, 0.436},
    {0.615, -0.51499, -0.10001},
};

using Mat3 = std::array<std::array<double, 3>, 3>;

namespace detail {

inline Mat3 invert3(const double m[3][3]) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 inv;
  inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return inv;
}

}  // namespace detail

// Exact inverse of the forward matrix, computed once rather than hardcoding
// published approximate coefficients.
inline const Mat3& yuv_to_rgb_matrix() {
  static const Mat3 inv = detail::invert3(kRgbToYuv);
  return inv;
}

struct YuvImage {
  int height = 0;
  int width = 0;
  std::vector<double> y, u, v;

  YuvImage() = default;
  YuvImage(int h, int w)
      : height(h),
        width(w),
        y(static_cast<std::size_t>(h) * w, 0.0),
        u(y.size(), 0.0),
        v(y.size(), 0.0) {}
  std::size_t pixels() const { return y.size(); }
};

inline YuvImage rgb_to_yuv(const Image& img) {
  YuvImage out(img.height, img.width);
  for (std::size_t p = 0; p < out.pixels(); ++p) {
    const double r = img.data[p * 3], g = img.data[p * 3 + 1], b = img.data[p * 3 + 2];
    out.y[p] = kRgbToYuv[0][0] * r + kRgbToYuv[0][1] * g + kRgbToYuv[0][2] * b;
    out.u[p] = kRgbToYuv[1][0] * r + kRgbToYuv[1][1] * g + kRgbToYuv[1][2] * b;
    out.v[p] = kRgbToYuv[2][0] * r + kRgbToYuv[2][1] * g + kRgbToYuv[2][2] * b;
  }
  return out;
}

// Inverse transform; output values may fall outside [0,1].
inline Image yuv_to_rgb(const YuvImage& yuv) {
  const Mat3& inv = yuv_to_rgb_matrix();
  Image out(yuv.height, yuv.width);
  for (std::size_t p = 0; p < yuv.pixels(); ++p) {
    for (int c = 0; c < 3; ++c)
      out.data[p * 3 + c] = inv[c][0] * yuv.y[p] + inv[c][1] * yuv.u[p] + inv[c][2] * yuv.v[p];
  }
  return out;
}

namespace detail {

// Largest s in [0,1] such that yuv_to_rgb(y, s*u, s*v) lies in [0,1]^3,
// closed form per linear channel bound. Pixels already inside (within 1e-12)
// keep s = 1 so projection is idempotent.
inline double gamut_scale(double y, double u, double v) {
  constexpr double kTol = 1e-12;
  const Mat3& inv = yuv_to_rgb_matrix();
  double s = 1.0;
  for (int c = 0; c < 3; ++c) {
    const double a = inv[c][0] * y;
    const double b = inv[c][1] * u + inv[c][2] * v;
    const double c1 = a + b;
    if (c1 > 1.0 + kTol) s = std::min(s, b > 0.0 ? (1.0 - a) / b : 0.0);
    if (c1 < -kTol) s = std::min(s, b < 0.0 ? a / -b : 0.0);
  }
  return std::min(1.0, std::max(0.0, s));
}

}  // namespace detail

// Scales chroma toward zero per pixel until the reconstructed RGB is in
// gamut; the Y plane is copied bit-identically.
inline YuvImage gamut_project(const YuvImage& in) {
  YuvImage out = in;
  for (std::size_t p = 0; p < in.pixels(); ++p) {
    const double s = detail::gamut_scale(in.y[p], in.u[p], in.v[p]);
    out.u[p] = in.u[p] * s;
    out.v[p] = in.v[p] * s;
  }
  return out;
}

// Luminance replicated into all three channels; keeps classifier input shape.
inline Image to_grayscale(const Image& img) {
  Image out(img.height, img.width);
  for (std::size_t p = 0; p < img.pixels(); ++p) {
    const double r = img.data[p * 3], g = img.data[p * 3 + 1], b = img.data[p * 3 + 2];
    const double y = kRgbToYuv[0][0] * r + kRgbToYuv[0][1] * g + kRgbToYuv[0][2] * b;
    out.data[p * 3] = out.data[p * 3 + 1] = out.data[p * 3 + 2] = y;
  }
  return out;
}

// Opponent-channel colorfulness on the 0-255 scale (whole-image population
// statistics): M = sqrt(var_rg + var_yb) + 0.3 * sqrt(mean_rg^2 + mean_yb^2).
inline double colorfulness(const Image& img) {
  const std::size_t n = img.pixels();
  if (n == 0) return 0.0;
  double sum_rg = 0.0, sum_yb = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double r = img.data[p * 3] * 255.0;
    const double g = img.data[p * 3 + 1] * 255.0;
    const double b = img.data[p * 3 + 2] * 255.0;
    sum_rg += r - g;
    sum_yb += 0.5 * (r + g) - b;
  }
  const double mean_rg = sum_rg / static_cast<double>(n);
  const double mean_yb = sum_yb / static_cast<double>(n);
  double var_rg = 0.0, var_yb = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double r = img.data[p * 3] * 255.0;
    const double g = img.data[p * 3 + 1] * 255.0;
    const double b = img.data[p * 3 + 2] * 255.0;
    const double drg = (r - g) - mean_rg;
    const double dyb = (0.5 * (r + g) - b) - mean_yb;
    var_rg += drg * drg;
    var_yb += dyb * dyb;
  }
  var_rg /= static_cast<double>(n);
  var_yb /= static_cast<double>(n);
  return std::sqrt(var_rg + var_yb) + 0.3 * std::sqrt(mean_rg * mean_rg + mean_yb * mean_yb);
}

// ---------------------------------------------------------------------------
// Graph-registered colorspace transform for the differentiable pipeline
// ---------------------------------------------------------------------------

// Applies a 3x3 matrix across three same-shape planes in one node.
inline std::array<Tensor, 3> color_transform(Graph& g, const Mat3& m, const Tensor& p0,
                                             const Tensor& p1, const Tensor& p2) {
  if (p0.shape() != p1.shape() || p0.shape() != p2.shape())
    throw ShapeError("color_transform: plane shapes disagree");
  const std::size_t n = p0.numel();
  std::array<Tensor, 3> out;
  const double* in[3] = {p0.values().data(), p1.values().data(), p2.values().data()};
  for (int c = 0; c < 3; ++c) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i)
      v[i] = m[c][0] * in[0][i] + m[c][1] * in[1][i] + m[c][2] * in[2][i];
    out[c] = Tensor(p0.shape(), std::move(v),
                    detail::any_requires({&p0, &p1, &p2}));
  }
  std::array<std::shared_ptr<TensorData>, 3> ind = {p0.data(), p1.data(), p2.data()};
  std::array<std::shared_ptr<TensorData>, 3> outd = {out[0].data(), out[1].data(), out[2].data()};
  const bool reqs[3] = {p0.requires_grad(), p1.requires_grad(), p2.requires_grad()};
  // Record against each output so pruning works whichever plane feeds the
  // loss; gradients distribute via the transpose.
  for (int c = 0; c < 3; ++c) {
    g.record("color_transform", {p0, p1, p2}, out[c], [ind, outd, m, reqs, n, c]() {
      for (int j = 0; j < 3; ++j) {
        if (!reqs[j]) continue;
        double* pg = ind[j]->grad_buffer();
        const double w = m[c][j];
        const auto& og = outd[c]->g;
        for (std::size_t i = 0; i < n; ++i) pg[i] += w * og[i];
      }
    });
  }
  return out;
}

inline std::array<Tensor, 3> rgb_to_yuv_planes(Graph& g, const Tensor& r, const Tensor& gr,
                                               const Tensor& b) {
  Mat3 m;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) m[i][j] = kRgbToYuv[i][j];
  return color_transform(g, m, r, gr, b);
}

inline std::array<Tensor, 3> yuv_to_rgb_planes(Graph& g, const Tensor& y, const Tensor& u,
                                               const Tensor& v) {
  return color_transform(g, yuv_to_rgb_matrix(), y, u, v);
}

}  // namespace chromaflow
