#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chromaflow/errors.hpp"
#include "chromaflow/tensor.hpp"

namespace chromaflow {

// RGB raster, H*W*3 doubles, row-major, channel-interleaved, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  double& at(int i, int j, int c) { return data[(static_cast<std::size_t>(i) * width + j) * 3 + c]; }
  double at(int i, int j, int c) const {
    return data[(static_cast<std::size_t>(i) * width + j) * 3 + c];
  }

  bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
};

// A dataset record: image, class label, and a stable identifier of the form
// "<source file>#<record index>". Targeted attacks may carry a per-image
// target class from the manifest.
struct LabeledImage {
  Image image;
  int label = 0;
  std::string id;
  std::optional<int> target_label;
};

// Planar [3,H,W] tensor from an interleaved image.
inline Tensor image_to_tensor(const Image& img, bool requires_grad = false) {
  const std::size_t plane = img.pixels();
  std::vector<double> v(plane * 3);
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) v[c * plane + p] = img.data[p * 3 + c];
  return Tensor({3, img.height, img.width}, std::move(v), requires_grad);
}

// Interleaved image from a planar [3,H,W] tensor, clamping residual
// out-of-range values (bounded by the caller's pipeline) into [0,1].
inline Image tensor_to_image(const Tensor& t) {
  if (t.shape().size() != 3 || t.shape()[0] != 3)
    throw ShapeError("tensor_to_image: expected [3,H,W], got " + shape_str(t.shape()));
  Image img(t.shape()[1], t.shape()[2]);
  const std::size_t plane = img.pixels();
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      double v = t.values()[c * plane + p];
      img.data[p * 3 + c] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    }
  return img;
}

}  // namespace chromaflow
