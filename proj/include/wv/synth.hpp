#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "wv/image.hpp"
#include "wv/manifest.hpp"
#include "wv/rng.hpp"

namespace wv::synth {

/// slant (radians), stroke thickness (radius, px), curvature amplitude,
/// baseline jitter (px).
using StyleVector = std::array<double, 4>;

struct Point {
  double x = 0, y = 0;
};

/// A writer's habits: a style vector plus the glyph skeleton of 3-4
/// connected pseudo-letters, each drawn as two quadratic segments.
struct WriterStyle {
  StyleVector style{};
  std::vector<Point> anchors;   // segment end points, 2 * letters + 1
  std::vector<Point> controls;  // one control point per segment
  std::vector<double> baseline_offsets;  // per anchor, scaled by the jitter habit
};

WriterStyle draw_writer_style(Rng& rng);

/// Per-sample variation around the writer's habits; small relative to the
/// spread between writers.
struct SampleVariation {
  StyleVector style{};
  double dx = 0, dy = 0, scale = 1;
  std::vector<Point> anchor_noise, control_noise;
};

SampleVariation draw_variation(const WriterStyle& writer, Rng& rng);

/// Renders onto a white 64 x 64 canvas with dark antialiased ink. The stroke
/// radius is adapted until the ink fraction lies in [0.03, 0.15].
GrayImage render(const WriterStyle& writer, const SampleVariation& variation);

/// Fraction of pixels darker than mid-gray.
double ink_fraction(const GrayImage& image);

struct SynthOptions {
  std::size_t writers = 10;
  std::size_t samples_per_writer = 9;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
};

/// Writes w###_s##.pgm images and manifest.csv into out_dir and returns the
/// manifest.
Manifest synth_dataset(const SynthOptions& options);

}  // namespace wv::synth
