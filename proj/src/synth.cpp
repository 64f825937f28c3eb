#include "wv/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "wv/error.hpp"

namespace wv::synth {

namespace {

constexpr std::size_t kCanvas = 64;
constexpr double kInk = 30.0;
constexpr double kMinInk = 0.03, kMaxInk = 0.15;

Point quad(const Point& a, const Point& c, const Point& b, double t) {
  const double u = 1.0 - t;
  return {u * u * a.x + 2 * u * t * c.x + t * t * b.x, u * u * a.y + 2 * u * t * c.y + t * t * b.y};
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

GrayImage rasterize(const std::vector<Point>& polyline, double radius) {
  GrayImage img(kCanvas, kCanvas, 255);
  for (std::size_t r = 0; r < kCanvas; ++r)
    for (std::size_t c = 0; c < kCanvas; ++c) {
      const Point p{static_cast<double>(c) + 0.5, static_cast<double>(r) + 0.5};
      double best = 1e9;
      for (std::size_t i = 0; i + 1 < polyline.size(); ++i)
        best = std::min(best, segment_distance(p, polyline[i], polyline[i + 1]));
      const double coverage = std::clamp(radius + 0.5 - best, 0.0, 1.0);
      img.at(r, c) = static_cast<std::uint8_t>(std::lround(255.0 - coverage * (255.0 - kInk)));
    }
  return img;
}

}  // namespace

WriterStyle draw_writer_style(Rng& rng) {
  WriterStyle w;
  const double slant = rng.uniform(-0.45, 0.45);
  const double thickness = rng.uniform(1.0, 2.0);
  const double curvature = rng.uniform(0.3, 1.4);
  const double jitter = rng.uniform(0.0, 4.0);
  w.style = {slant, thickness, curvature, jitter};

  const std::size_t letters = 3 + rng.below(2);
  std::vector<double> widths(letters);
  double total = 0;
  for (auto& wd : widths) total += (wd = rng.uniform(9.0, 15.0));
  double x = (static_cast<double>(kCanvas) - total) / 2.0;
  const double baseline = rng.uniform(38.0, 44.0);

  w.anchors.push_back({x, baseline});
  for (std::size_t i = 0; i < letters; ++i) {
    const double height = rng.uniform(8.0, 22.0);
    const double peak_at = rng.uniform(0.25, 0.75);
    const Point start = w.anchors.back();
    const Point peak{x + widths[i] * peak_at, baseline - height};
    const Point end{x + widths[i], baseline};
    // Control points bow each half-stroke sideways by the curvature habit.
    const double bow1 = curvature * rng.uniform(-1.0, 1.0) * widths[i];
    const double bow2 = curvature * rng.uniform(-1.0, 1.0) * widths[i];
    w.controls.push_back({(start.x + peak.x) / 2 - bow1, (start.y + peak.y) / 2 + 0.3 * bow1});
    w.anchors.push_back(peak);
    w.controls.push_back({(peak.x + end.x) / 2 + bow2, (peak.y + end.y) / 2 + 0.3 * bow2});
    w.anchors.push_back(end);
    x += widths[i];
  }
  for (std::size_t i = 0; i < w.anchors.size(); ++i) w.baseline_offsets.push_back(rng.uniform(-1.0, 1.0));
  return w;
}

SampleVariation draw_variation(const WriterStyle& writer, Rng& rng) {
  SampleVariation v;
  v.style = writer.style;
  v.style[0] += rng.uniform(-0.03, 0.03);
  v.style[1] *= rng.uniform(0.93, 1.07);
  v.style[2] *= rng.uniform(0.95, 1.05);
  v.style[3] *= rng.uniform(0.9, 1.1);
  v.dx = rng.uniform(-3.0, 3.0);
  v.dy = rng.uniform(-3.0, 3.0);
  v.scale = rng.uniform(0.95, 1.05);
  for (std::size_t i = 0; i < writer.anchors.size(); ++i)
    v.anchor_noise.push_back({0.6 * rng.normal(), 0.6 * rng.normal()});
  for (std::size_t i = 0; i < writer.controls.size(); ++i)
    v.control_noise.push_back({0.8 * rng.normal(), 0.8 * rng.normal()});
  return v;
}

GrayImage render(const WriterStyle& writer, const SampleVariation& v) {
  const double slant = v.style[0];
  const double curvature_ratio = writer.style[2] > 0 ? v.style[2] / writer.style[2] : 1.0;
  const double jitter = v.style[3];
  const double cx = kCanvas / 2.0, cy = kCanvas / 2.0;
  auto place = [&](Point p, const Point& noise, double base_off) {
    p.x += noise.x;
    p.y += noise.y + jitter * base_off;
    // Shear about the canvas centre row, then scale and translate.
    p.x += (cy - p.y) * std::tan(slant);
    p.x = cx + (p.x - cx) * v.scale + v.dx;
    p.y = cy + (p.y - cy) * v.scale + v.dy;
    return p;
  };

  std::vector<Point> anchors;
  for (std::size_t i = 0; i < writer.anchors.size(); ++i)
    anchors.push_back(place(writer.anchors[i], v.anchor_noise[i], writer.baseline_offsets[i]));
  std::vector<Point> polyline{anchors.front()};
  constexpr int kSteps = 16;
  for (std::size_t s = 0; s < writer.controls.size(); ++s) {
    const Point& a0 = writer.anchors[s];
    const Point& b0 = writer.anchors[s + 1];
    Point c0 = writer.controls[s];
    const Point mid{(a0.x + b0.x) / 2, (a0.y + b0.y) / 2};
    c0 = {mid.x + (c0.x - mid.x) * curvature_ratio, mid.y + (c0.y - mid.y) * curvature_ratio};
    const double off = (writer.baseline_offsets[s] + writer.baseline_offsets[s + 1]) / 2;
    const Point ctrl = place(c0, v.control_noise[s], off);
    for (int k = 1; k <= kSteps; ++k)
      polyline.push_back(quad(anchors[s], ctrl, anchors[s + 1], static_cast<double>(k) / kSteps));
  }

  double radius = v.style[1];
  GrayImage img = rasterize(polyline, radius);
  for (int attempt = 0; attempt < 40; ++attempt) {
    const double frac = ink_fraction(img);
    if (frac >= kMinInk && frac <= kMaxInk) return img;
    radius *= frac < kMinInk ? 1.15 : 0.87;
    img = rasterize(polyline, radius);
  }
  const double frac = ink_fraction(img);
  if (frac < kMinInk || frac > kMaxInk)
    throw ContractError("synthetic sample ink fraction " + std::to_string(frac) + " out of range");
  return img;
}

double ink_fraction(const GrayImage& image) {
  std::size_t ink = 0;
  for (auto p : image.pixels) ink += p < 128;
  return static_cast<double>(ink) / static_cast<double>(image.pixels.size());
}

Manifest synth_dataset(const SynthOptions& options) {
  if (options.writers < 2) throw ConfigError("synth needs at least 2 writers");
  if (options.samples_per_writer < 2) throw ConfigError("synth needs at least 2 samples per writer");
  std::error_code ec;
  std::filesystem::create_directories(options.out_dir, ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());

  Rng root(options.seed);
  Manifest m;
  for (std::size_t w = 0; w < options.writers; ++w) {
    Rng wrng = root.split();
    const auto writer = draw_writer_style(wrng);
    char wid[16];
    std::snprintf(wid, sizeof wid, "w%03zu", w);
    for (std::size_t s = 0; s < options.samples_per_writer; ++s) {
      Rng srng = wrng.split();
      const auto img = render(writer, draw_variation(writer, srng));
      char sid[16], name[48];
      std::snprintf(sid, sizeof sid, "s%02zu", s);
      std::snprintf(name, sizeof name, "%s_%s.pgm", wid, sid);
      const auto path = options.out_dir / name;
      write_pgm(img, path);
      m.samples.push_back({path, wid, sid, std::nullopt});
    }
  }
  write_manifest(m, options.out_dir / "manifest.csv");
  return m;
}

}  // namespace wv::synth
