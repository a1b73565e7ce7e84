#pragma once

#include <cmath>

#include "chromaflow/color.hpp"
#include "chromaflow/image.hpp"

namespace chromaflow {

// L2 / L-infinity distances per YUV plane plus RGB, double precision.
struct DistortionStats {
  double y_l2 = 0.0, y_linf = 0.0;
  double u_l2 = 0.0, u_linf = 0.0;
  double v_l2 = 0.0, v_linf = 0.0;
  double rgb_l2 = 0.0, rgb_linf = 0.0;
};

inline DistortionStats distortion_stats(const Image& original, const Image& adversarial) {
  if (!original.same_shape(adversarial))
    throw ShapeError("distortion_stats: image shapes disagree");
  const YuvImage a = rgb_to_yuv(original);
  const YuvImage b = rgb_to_yuv(adversarial);
  DistortionStats s;
  auto plane = [](const std::vector<double>& x, const std::vector<double>& y, double& l2,
                  double& linf) {
    double sq = 0.0, mx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = std::abs(x[i] - y[i]);
      sq += d * d;
      mx = std::max(mx, d);
    }
    l2 = std::sqrt(sq);
    linf = mx;
  };
  plane(a.y, b.y, s.y_l2, s.y_linf);
  plane(a.u, b.u, s.u_l2, s.u_linf);
  plane(a.v, b.v, s.v_l2, s.v_linf);
  plane(original.data, adversarial.data, s.rgb_l2, s.rgb_linf);
  return s;
}

}  // namespace chromaflow
