#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "wv/image.hpp"
#include "wv/tensor.hpp"

namespace wv {

struct PreprocessSpec {
  std::size_t target_size = 64;
  bool invert = true;
  /// Values below the threshold become 0 (30 for signatures).
  std::optional<int> threshold;
  /// Apply the threshold on the ink scale, after inversion (otherwise before).
  bool threshold_after_inversion = true;
  bool normalize = true;

  void validate() const;
};

/// Pads to a square with white background, bicubic-resamples to
/// target_size, optionally inverts and thresholds, and scales to [0, 1].
template <typename T>
Tensor<T> preprocess(const GrayImage& image, const PreprocessSpec& spec);

/// Catmull-Rom (a = -0.5) resampling with half-pixel-centered sampling and
/// replicated borders. src is row-major height x width.
std::vector<double> resize_bicubic(const std::vector<double>& src, std::size_t height,
                                   std::size_t width, std::size_t out_height, std::size_t out_width);

/// Symmetric padding of the shorter side with `fill` to a square of side
/// max(h, w). The extra pixel of an odd difference goes to the bottom/right.
GrayImage pad_to_square(const GrayImage& image, std::uint8_t fill = 255);

}  // namespace wv
