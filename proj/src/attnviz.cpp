#include "wv/attnviz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <tuple>

#include "wv/image.hpp"
#include "wv/manifest.hpp"

namespace wv::viz {

namespace {

void require_rank2(const Tensor<double>& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + " must be rank 2, got " + shape_str(t.shape()));
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_heat_csv(const Tensor<double>& heat, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write heat CSV: " + path.string());
  const auto h = heat.dim(0), w = heat.dim(1);
  char buf[40];
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::snprintf(buf, sizeof buf, "%.17g", heat[y * w + x]);
      if (x) f << ',';
      f << buf;
    }
    f << '\n';
  }
  if (!f) throw IoError("failed writing heat CSV: " + path.string());
}

}  // namespace

void OverlaySpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("overlay alpha must lie in [0, 1]");
}

Tensor<double> bilinear_upsample(const Tensor<double>& map, std::size_t out_h, std::size_t out_w) {
  require_rank2(map, "bilinear_upsample input");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_upsample: empty output size");
  const auto h = map.dim(0), w = map.dim(1);
  Tensor<double> out({out_h, out_w});
  auto src = map.data();
  auto dst = out.data();
  auto tap = [](std::size_t o, std::size_t n_in, std::size_t n_out) {
    const double pos = (static_cast<double>(o) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
    const double lo = std::floor(pos);
    const double frac = pos - lo;
    const auto clamp = [n_in](double i) {
      return static_cast<std::size_t>(std::clamp(i, 0.0, static_cast<double>(n_in - 1)));
    };
    return std::tuple{clamp(lo), clamp(lo + 1), frac};
  };
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const auto [y0, y1, fy] = tap(oy, h, out_h);
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const auto [x0, x1, fx] = tap(ox, w, out_w);
      const double top = src[y0 * w + x0] * (1 - fx) + src[y0 * w + x1] * fx;
      const double bottom = src[y1 * w + x0] * (1 - fx) + src[y1 * w + x1] * fx;
      dst[oy * out_w + ox] = top * (1 - fy) + bottom * fy;
    }
  }
  return out;
}

double area_weighted_mass(const Tensor<double>& upsampled, std::size_t src_h, std::size_t src_w) {
  require_rank2(upsampled, "area_weighted_mass input");
  double s = 0;
  for (double v : upsampled.data()) s += v;
  return s * static_cast<double>(src_h * src_w) / static_cast<double>(upsampled.numel());
}

Tensor<double> ca_query_row(const AttentionArtifacts& art, std::size_t head, std::size_t query_row,
                            std::size_t query_col) {
  if (!art.has_ca())
    throw ContractError("no cross-attention maps captured; run the forward pass with capture enabled on a cross-attention variant");
  if (head >= art.ca_maps.size())
    throw IndexError("head " + std::to_string(head) + " out of range, model has " +
                     std::to_string(art.ca_maps.size()) + " heads");
  const auto h = art.ca_height, w = art.ca_width;
  if (query_row >= h || query_col >= w)
    throw IndexError("query (" + std::to_string(query_row) + ", " + std::to_string(query_col) +
                     ") outside the " + std::to_string(h) + "x" + std::to_string(w) + " attention grid");
  const auto& beta = art.ca_maps[head];
  const std::size_t t = h * w;
  if (beta.shape() != Shape{t, t}) throw DimensionError("captured attention map has shape " + shape_str(beta.shape()));
  Tensor<double> row({h, w});
  const std::size_t i = query_row * w + query_col;
  std::copy_n(beta.data().begin() + static_cast<std::ptrdiff_t>(i * t), t, row.data().begin());
  return row;
}

Tensor<double> ca_query_map(const AttentionArtifacts& art, std::size_t head, std::size_t query_row,
                            std::size_t query_col) {
  return bilinear_upsample(ca_query_row(art, head, query_row, query_col), kInputSize, kInputSize);
}

Tensor<double> sa_map(const AttentionArtifacts& art) {
  if (!art.has_sa())
    throw ContractError("no soft-attention map captured; run the forward pass with capture enabled on a soft-attention variant");
  return bilinear_upsample(art.sa_maps.front(), kInputSize, kInputSize);
}

std::array<double, 3> colormap(double v) {
  v = std::clamp(v, 0.0, 1.0);
  if (v < 0.5) {
    const double u = v * 2;
    return {0.0, u, 1.0 - u};
  }
  const double u = (v - 0.5) * 2;
  return {u, 1.0 - u, 0.0};
}

OverlayResult overlay_write(const Tensor<double>& base, const Tensor<double>& heat,
                            const OverlaySpec& spec, const std::filesystem::path& path) {
  spec.validate();
  require_rank2(heat, "heat map");
  const auto h = heat.dim(0), w = heat.dim(1);
  const bool base_ok = (base.rank() == 2 && base.shape() == heat.shape()) ||
                       (base.rank() == 3 && base.dim(0) == h && base.dim(1) == w && base.dim(2) == 1);
  if (!base_ok)
    throw DimensionError("overlay base " + shape_str(base.shape()) + " does not match heat " + shape_str(heat.shape()));
  double lo = heat[0], hi = heat[0];
  for (double v : heat.data()) {
    if (!(v >= 0.0)) throw ContractError("heat map must be nonnegative and finite");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(hi)) throw ContractError("heat map must be finite");

  OverlayResult result;
  if (hi == 0.0) {
    result = {true, "heat map is all zero; base written without overlay"};
  } else if (hi == lo) {
    result = {true, "heat map is constant; base written without overlay"};
  }

  RgbImage img{w, h, std::vector<std::uint8_t>(w * h * 3)};
  for (std::size_t i = 0; i < h * w; ++i) {
    const double g = std::clamp(base[i], 0.0, 1.0);
    for (int c = 0; c < 3; ++c) img.rgb[i * 3 + c] = to_byte(g);
    if (result.warning) continue;
    const auto color = colormap((heat[i] - lo) / (hi - lo));
    for (int c = 0; c < 3; ++c)
      img.rgb[i * 3 + c] = to_byte((1.0 - spec.alpha) * g + spec.alpha * color[static_cast<std::size_t>(c)]);
  }
  write_ppm(img, path);
  auto csv = path;
  csv.replace_extension(".csv");
  write_heat_csv(heat, csv);
  return result;
}

std::vector<std::vector<double>> read_heat_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read heat CSV: " + path.string());
  std::vector<std::vector<double>> rows;
  for (std::string line; std::getline(f, line);) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& field : split_csv_line(line)) {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(field, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != field.size() || field.empty()) throw FormatError("bad heat value '" + field + "' in " + path.string());
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw FormatError("ragged heat CSV: " + path.string());
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename T>
ExportResult export_attention(const VerifierModel<T>& model, const Tensor<T>& img_a,
                              const Tensor<T>& img_b, const Tensor<double>& display_a,
                              const Tensor<double>& display_b, const std::vector<CaQuery>& queries,
                              const OverlaySpec& spec, const std::filesystem::path& out_dir) {
  spec.validate();
  if (model.train_mode()) throw ContractError("export_attention() needs the model in eval mode");
  const auto out = forward(model, img_a, img_b, true);
  const auto& art = out.artifacts;
  if (!queries.empty() && !art.has_ca())
    throw ContractError(std::string("variant ") + std::string(variant_name(model.arch().variant)) +
                        " has no cross attention to export");
  for (const auto& q : queries) ca_query_row(art, q.head, q.row, q.col);  // validate before writing

  std::filesystem::create_directories(out_dir);
  ExportResult res;
  res.same_writer_likelihood = static_cast<double>(out.probs[1]);
  auto emit = [&](const Tensor<double>& base, const Tensor<double>& heat, const std::string& name) {
    const auto path = out_dir / (name + ".ppm");
    const auto r = overlay_write(base, heat, spec, path);
    res.files.push_back(path);
    res.files.push_back(out_dir / (name + ".csv"));
    if (r.warning) res.warnings.push_back(name + ": " + r.message);
  };
  for (const auto& q : queries) {
    const auto& base = art.ca_key_image[q.head] == 0 ? display_a : display_b;
    emit(base, ca_query_map(art, q.head, q.row, q.col),
         "ca_h" + std::to_string(q.head) + "_r" + std::to_string(q.row) + "_c" + std::to_string(q.col));
  }
  if (art.has_sa()) {
    const auto heat = sa_map(art);
    emit(display_a, heat, "sa_imgA");
    emit(display_b, heat, "sa_imgB");
  }
  return res;
}

template ExportResult export_attention(const VerifierModel<float>&, const Tensor<float>&, const Tensor<float>&,
                                       const Tensor<double>&, const Tensor<double>&, const std::vector<CaQuery>&,
                                       const OverlaySpec&, const std::filesystem::path&);
template ExportResult export_attention(const VerifierModel<double>&, const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&, const Tensor<double>&, const std::vector<CaQuery>&,
                                       const OverlaySpec&, const std::filesystem::path&);

}  // namespace wv::viz
