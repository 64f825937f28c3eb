#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "wv/ops.hpp"
#include "wv/rng.hpp"
#include "wv/tensor.hpp"

namespace wvtest {

using wv::Shape;
using wv::Tape;
using wv::Tensor;

template <typename T = double>
Tensor<T> random_tensor(const Shape& shape, wv::Rng& rng, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  t.set_requires_grad(requires_grad);
  return t;
}

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

/// Scratch directory under the system temp dir, emptied on construction and
/// removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("wverify_test_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

/// Norm below which a finite-difference gradient is indistinguishable from
/// cancellation error at step 1e-5.
inline constexpr double kFdNoiseFloor = 1e-8;

struct GradCheck {
  double max_rel_error = 0;  // worst tensor-wise relative error
  std::size_t worst_input = 0;
  std::size_t coords_checked = 0;
};

/// Central finite differences against the tape. `loss` maps the inputs to a
/// scalar; relative error per input is ||analytic - numeric|| / max(||analytic||,
/// ||numeric||) over the checked coordinates, with both-zero counting as 0.
/// Inputs above `max_coords` entries are checked on a seeded random subset.
inline GradCheck check_gradients(const std::function<Tensor<double>(Tape<double>*)>& loss,
                                 std::vector<Tensor<double>> inputs, double step = 1e-5,
                                 std::size_t max_coords = 0, std::uint64_t seed = 17) {
  for (auto& t : inputs) {
    if (!t.requires_grad()) t.set_requires_grad(true);
    t.zero_grad();
  }
  Tape<double> tape;
  auto l = loss(&tape);
  tape.backward(l);

  wv::Rng pick(seed);
  GradCheck result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& t = inputs[k];
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords && coords.size() > max_coords) {
      wv::shuffle(coords.begin(), coords.end(), pick);
      coords.resize(max_coords);
    }
    const auto analytic = std::vector<double>(t.grad().begin(), t.grad().end());
    double diff2 = 0, an2 = 0, nu2 = 0;
    for (auto i : coords) {
      const double orig = t[i];
      t.data()[i] = orig + step;
      const double up = loss(nullptr).item();
      t.data()[i] = orig - step;
      const double down = loss(nullptr).item();
      t.data()[i] = orig;
      const double numeric = (up - down) / (2 * step);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      an2 += analytic[i] * analytic[i];
      nu2 += numeric * numeric;
    }
    result.coords_checked += coords.size();
    const double denom = std::sqrt(std::max(an2, nu2));
    // Both sides at rounding-noise level: a structurally zero gradient.
    const bool zero = std::sqrt(std::max(an2, nu2)) < kFdNoiseFloor;
    const double rel = denom == 0 || zero ? 0.0 : std::sqrt(diff2) / denom;
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_input = k;
    }
  }
  return result;
}

/// Fixed random projection of an op output to a scalar, so every output entry
/// contributes to the checked gradient.
inline Tensor<double> project_to_scalar(const Tensor<double>& out, const Tensor<double>& weights,
                                        Tape<double>* tape) {
  return wv::nn::sum(wv::nn::mul(out, weights, tape), tape);
}

}  // namespace wvtest
