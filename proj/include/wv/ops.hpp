#pragma once

#include <cstddef>
#include <vector>

#include "wv/rng.hpp"
#include "wv/tensor.hpp"

// Differentiable primitives. Feature maps are height x width x channels,
// row-major. Every op takes an optional tape; when the tape is present and an
// input requires a gradient, the op records its backward rule.
namespace wv::nn {

enum class Padding { same, valid };

struct ConvSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t stride = 1;
  Padding padding = Padding::same;

  void validate() const;
  /// Weight layout used by conv2d: kernel_h x kernel_w x in x out.
  Shape weight_shape() const { return {kernel_h, kernel_w, in_channels, out_channels}; }
};

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

/// r = softmax_rows(a * b^T) * v with a: t x m, b: s x m, v: s x p. The t x s
/// weight matrix is returned in `weights` when keep_weights is set; it is
/// always kept internally while recording. Rows are processed in blocks so the
/// untaped path never materializes the full matrix.
template <typename T>
struct AttentionResult {
  Tensor<T> out;
  Tensor<T> weights;
};
template <typename T>
AttentionResult<T> attention(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& v,
                             bool keep_weights = false, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, Tape<T>* tape = nullptr);

/// Cross-correlation. weights: kh x kw x c_in x c_out, bias: c_out.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                 std::size_t stride = 1, Padding padding = Padding::same, Tape<T>* tape = nullptr);

/// K kernels of size 3 x 3 x d that consume the full depth of an h x w x d
/// input (same padding spatially), giving h x w x K.
template <typename T>
Tensor<T> conv3d_collapse(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                          Tape<T>* tape = nullptr);

/// 2x2 window, stride 2. Ties route the gradient to the lowest row-major index.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& input, Tape<T>* tape = nullptr);

/// Softmax over all spatial positions jointly. Accepts h x w, or h x w x C in
/// which case each channel is normalized independently.
template <typename T>
Tensor<T> softmax_spatial(const Tensor<T>& input, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape = nullptr);

/// x: n, weights: n x m, bias: m.
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias,
                Tape<T>* tape = nullptr);

/// Concatenates along the last axis; all leading dimensions must agree.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr);

/// Channels [begin, end) of the last axis.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end,
                         Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> flatten(const Tensor<T>& x, Tape<T>* tape = nullptr) {
  return reshape(x, Shape{x.numel()}, tape);
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

/// Elementwise product of equally shaped tensors.
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

/// Multiplication by a constant.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c, Tape<T>* tape = nullptr);

/// Multiplication by a one-element tensor, differentiable in both arguments.
template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s, Tape<T>* tape = nullptr);

/// x: h x w x c scaled per location by map: h x w.
template <typename T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& map, Tape<T>* tape = nullptr);

/// h x w x K -> h x w.
template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x, Tape<T>* tape = nullptr);

/// Sum of all entries, shape {1}.
template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr);

/// Inverted dropout: kept units are divided by (1 - rate). Identity when
/// train is false (rng may then be null).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, Rng* rng, Tape<T>* tape = nullptr);

/// Per-channel normalization over spatial positions with learnable gain and
/// shift (gamma, beta: c). Used when attention normalization is enabled.
template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tape<T>* tape = nullptr);

/// Numerically stable exp used by the softmax kernels.
template <typename T>
void exp_inplace(T* values, std::size_t n);

}  // namespace wv::nn
