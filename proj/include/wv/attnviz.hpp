#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "wv/artifacts.hpp"
#include "wv/model.hpp"
#include "wv/tensor.hpp"

namespace wv::viz {

enum class Upsample { bilinear };

struct OverlaySpec {
  double alpha = 0.5;  // weight of the heat color
  Upsample upsample = Upsample::bilinear;
  void validate() const;
};

/// Half-pixel-centered bilinear resize of an h x w map (rank 2), edges clamped.
Tensor<double> bilinear_upsample(const Tensor<double>& map, std::size_t out_h, std::size_t out_w);

/// Sum of an upsampled map scaled back to the area of the source grid.
double area_weighted_mass(const Tensor<double>& upsampled, std::size_t src_h, std::size_t src_w);

/// Row query_row * w + query_col of head `head`'s attention matrix, as an h x w map.
Tensor<double> ca_query_row(const AttentionArtifacts& art, std::size_t head, std::size_t query_row,
                            std::size_t query_col);
/// The same row upsampled to 64 x 64.
Tensor<double> ca_query_map(const AttentionArtifacts& art, std::size_t head, std::size_t query_row,
                            std::size_t query_col);
/// Soft-attention score map upsampled to 64 x 64.
Tensor<double> sa_map(const AttentionArtifacts& art);

/// Blue -> green -> red ramp for v in [0, 1].
std::array<double, 3> colormap(double v);

struct OverlayResult {
  bool warning = false;  // heat was all zero or flat; the base was written unmodified
  std::string message;
};

/// `base` holds display intensities in [0, 1] (rank 3, H x W x 1 or rank 2).
/// Writes `path` (P6) and the raw heat as CSV at `path` with extension .csv.
OverlayResult overlay_write(const Tensor<double>& base, const Tensor<double>& heat,
                            const OverlaySpec& spec, const std::filesystem::path& path);

std::vector<std::vector<double>> read_heat_csv(const std::filesystem::path& path);

struct CaQuery {
  std::size_t head = 0;
  std::size_t row = 0;
  std::size_t col = 0;
};

struct ExportResult {
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
  double same_writer_likelihood = 0;
};

/// Runs a capture-enabled eval forward on preprocessed inputs and writes the
/// requested CA overlays plus sa_imgA / sa_imgB (when the variant has SA) into
/// `out_dir`. Each CA map is drawn over the image that supplied that head's keys.
/// `display_a` / `display_b` are the backgrounds, intensities in [0, 1].
template <typename T>
ExportResult export_attention(const VerifierModel<T>& model, const Tensor<T>& img_a,
                              const Tensor<T>& img_b, const Tensor<double>& display_a,
                              const Tensor<double>& display_b, const std::vector<CaQuery>& queries,
                              const OverlaySpec& spec, const std::filesystem::path& out_dir);

}  // namespace wv::viz
