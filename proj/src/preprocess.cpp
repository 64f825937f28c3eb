#include "wv/preprocess.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace wv {

namespace {

double catmull_rom(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x < 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

// Per output coordinate: the four source indices (clamped) and their weights.
struct Taps {
  std::vector<std::array<std::size_t, 4>> index;
  std::vector<std::array<double, 4>> weight;
};

Taps taps(std::size_t in, std::size_t out) {
  Taps t;
  t.index.resize(out);
  t.weight.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const auto last = static_cast<std::ptrdiff_t>(in) - 1;
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      const auto i = std::clamp(static_cast<std::ptrdiff_t>(base) + k - 1, std::ptrdiff_t{0}, last);
      t.index[o][k] = static_cast<std::size_t>(i);
      t.weight[o][k] = catmull_rom(frac - (k - 1));
    }
  }
  return t;
}

}  // namespace

void PreprocessSpec::validate() const {
  if (target_size == 0) throw ConfigError("preprocess target_size must be positive");
  if (threshold && (*threshold < 0 || *threshold > 255))
    throw ConfigError("preprocess threshold must lie in [0, 255]");
}

std::vector<double> resize_bicubic(const std::vector<double>& src, std::size_t height,
                                   std::size_t width, std::size_t out_height,
                                   std::size_t out_width) {
  if (src.size() != height * width || height == 0 || width == 0)
    throw InputError("resize_bicubic: source buffer does not match its dimensions");
  if (height == out_height && width == out_width) return src;
  const auto tx = taps(width, out_width);
  const auto ty = taps(height, out_height);
  // Horizontal pass then vertical pass.
  std::vector<double> mid(height * out_width);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < out_width; ++c) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += tx.weight[c][k] * src[r * width + tx.index[c][k]];
      mid[r * out_width + c] = acc;
    }
  std::vector<double> out(out_height * out_width);
  for (std::size_t r = 0; r < out_height; ++r)
    for (std::size_t c = 0; c < out_width; ++c) {
      double acc = 0;
      for (int k = 0; k < 4; ++k) acc += ty.weight[r][k] * mid[ty.index[r][k] * out_width + c];
      out[r * out_width + c] = acc;
    }
  return out;
}

GrayImage pad_to_square(const GrayImage& image, std::uint8_t fill) {
  const std::size_t side = std::max(image.width, image.height);
  GrayImage out(side, side, fill);
  const std::size_t top = (side - image.height) / 2;
  const std::size_t left = (side - image.width) / 2;
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < image.width; ++c) out.at(top + r, left + c) = image.at(r, c);
  return out;
}

template <typename T>
Tensor<T> preprocess(const GrayImage& image, const PreprocessSpec& spec) {
  spec.validate();
  if (image.empty() || image.pixels.size() != image.width * image.height)
    throw InputError("preprocess: empty or malformed image");
  const auto square = pad_to_square(image, 255);
  std::vector<double> v(square.pixels.begin(), square.pixels.end());
  const std::size_t n = spec.target_size;
  v = resize_bicubic(v, square.height, square.width, n, n);

  const auto apply_threshold = [&](double& x) {
    if (spec.threshold && x < static_cast<double>(*spec.threshold)) x = 0.0;
  };
  for (auto& x : v) {
    x = std::clamp(x, 0.0, 255.0);
    if (!spec.threshold_after_inversion) apply_threshold(x);
    if (spec.invert) x = 255.0 - x;
    if (spec.threshold_after_inversion) apply_threshold(x);
    if (spec.normalize) x /= 255.0;
  }
  std::vector<T> values(v.begin(), v.end());
  return Tensor<T>(Shape{n, n, 1}, std::move(values));
}

template Tensor<float> preprocess(const GrayImage&, const PreprocessSpec&);
template Tensor<double> preprocess(const GrayImage&, const PreprocessSpec&);

}  // namespace wv
