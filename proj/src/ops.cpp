#include "wv/ops.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <memory>

#include "gemm.hpp"

namespace wv::nn {

namespace {

[[noreturn]] void dim_error(const std::string& op, const std::string& detail) {
  throw DimensionError(op + ": " + detail);
}

void require_rank(const char* op, const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank)
    dim_error(op, std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                      shape_str(s));
}

template <typename T>
void accumulate(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

struct ConvGeometry {
  std::size_t h, w, cin, kh, kw, cout, stride;
  std::size_t ho, wo, pad_top, pad_left;
  std::size_t patch() const { return kh * kw * cin; }
};

ConvGeometry conv_geometry(const std::string& op, std::size_t h, std::size_t w, std::size_t cin,
                           std::size_t kh, std::size_t kw, std::size_t cout, std::size_t stride,
                           Padding padding) {
  if (stride == 0) dim_error(op, "stride must be >= 1");
  ConvGeometry g{h, w, cin, kh, kw, cout, stride, 0, 0, 0, 0};
  if (padding == Padding::same) {
    g.ho = (h + stride - 1) / stride;
    g.wo = (w + stride - 1) / stride;
    const std::size_t need_h = (g.ho - 1) * stride + kh;
    const std::size_t need_w = (g.wo - 1) * stride + kw;
    g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
    g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
  } else {
    if (h < kh || w < kw)
      dim_error(op, "valid padding needs input at least as large as the kernel");
    g.ho = (h - kh) / stride + 1;
    g.wo = (w - kw) / stride + 1;
  }
  return g;
}

// Patch matrix: one row per output location, columns ordered (ky, kx, c).
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      T* row = col + (oy * g.wo + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad_top);
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                          static_cast<std::ptrdiff_t>(g.pad_left);
          T* dst = row + (ky * g.kw + kx) * g.cin;
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(g.h) ||
              ix >= static_cast<std::ptrdiff_t>(g.w)) {
            std::fill(dst, dst + g.cin, T(0));
          } else {
            const T* src = in + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
            std::copy(src, src + g.cin, dst);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* in_grad) {
  const std::size_t patch = g.patch();
  for (std::size_t oy = 0; oy < g.ho; ++oy) {
    for (std::size_t ox = 0; ox < g.wo; ++ox) {
      const T* row = col + (oy * g.wo + ox) * patch;
      for (std::size_t ky = 0; ky < g.kh; ++ky) {
        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                        static_cast<std::ptrdiff_t>(g.pad_top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kw; ++kx) {
          const auto ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                          static_cast<std::ptrdiff_t>(g.pad_left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) continue;
          const T* src = row + (ky * g.kw + kx) * g.cin;
          T* dst = in_grad + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

// Shared convolution core. When out_major is false the weights are a
// (patch x cout) matrix (kh,kw,cin,cout layout); when true they are
// (cout x patch) (cout,kh,kw,cin layout).
template <typename T>
Tensor<T> conv_core(const std::string& op, const ConvGeometry& g, const Tensor<T>& input,
                    const Tensor<T>& weights, const Tensor<T>& bias, bool out_major,
                    Tape<T>* tape) {
  const std::size_t rows = g.ho * g.wo;
  const std::size_t patch = g.patch();
  const bool direct = g.kh == 1 && g.kw == 1 && g.stride == 1;

  std::shared_ptr<std::vector<T>> col;
  const T* col_ptr = input.ptr();
  if (!direct) {
    col = std::make_shared<std::vector<T>>(rows * patch);
    im2col(g, input.ptr(), col->data());
    col_ptr = col->data();
  }

  Tensor<T> out(Shape{g.ho, g.wo, g.cout});
  T* o = out.ptr();
  const T* b = bias.ptr();
  for (std::size_t r = 0; r < rows; ++r) std::copy(b, b + g.cout, o + r * g.cout);
  if (out_major)
    detail::gemm(false, true, rows, g.cout, patch, T(1), col_ptr, patch, weights.ptr(), patch,
                 T(1), o, g.cout);
  else
    detail::gemm(false, false, rows, g.cout, patch, T(1), col_ptr, patch, weights.ptr(), g.cout,
                 T(1), o, g.cout);

  if (should_record(tape, input, weights, bias)) {
    out.set_requires_grad(true);
    tape->record([g, input, weights, bias, out, col, out_major, direct, rows, patch]() mutable {
      const T* go = out.grad().data();
      const T* cp = direct ? input.ptr() : col->data();
      if (weights.requires_grad()) {
        if (out_major)
          detail::gemm(true, false, g.cout, patch, rows, T(1), go, g.cout, cp, patch, T(1),
                       weights.grad().data(), patch);
        else
          detail::gemm(true, false, patch, g.cout, rows, T(1), cp, patch, go, g.cout, T(1),
                       weights.grad().data(), g.cout);
      }
      if (bias.requires_grad()) {
        T* gb = bias.grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < g.cout; ++c) gb[c] += go[r * g.cout + c];
      }
      if (input.requires_grad()) {
        T* gi = input.grad().data();
        if (direct) {
          if (out_major)
            detail::gemm(false, false, rows, patch, g.cout, T(1), go, g.cout, weights.ptr(), patch,
                         T(1), gi, patch);
          else
            detail::gemm(false, true, rows, patch, g.cout, T(1), go, g.cout, weights.ptr(), g.cout,
                         T(1), gi, patch);
        } else {
          std::vector<T> gcol(rows * patch, T(0));
          if (out_major)
            detail::gemm(false, false, rows, patch, g.cout, T(1), go, g.cout, weights.ptr(), patch,
                         T(0), gcol.data(), patch);
          else
            detail::gemm(false, true, rows, patch, g.cout, T(1), go, g.cout, weights.ptr(), g.cout,
                         T(0), gcol.data(), patch);
          col2im(g, gcol.data(), gi);
        }
      }
    });
  }
  (void)op;
  return out;
}

// Eight partial accumulators keep the contiguous reductions vectorizable
// while fixing the summation order.
constexpr std::size_t kLanes = 8;

template <typename T>
T max_contiguous(const T* x, std::size_t n) {
  T lanes[kLanes];
  std::fill(lanes, lanes + kLanes, x[0]);
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] = std::max(lanes[l], x[j + l]);
  T mx = lanes[0];
  for (std::size_t l = 1; l < kLanes; ++l) mx = std::max(mx, lanes[l]);
  for (; j < n; ++j) mx = std::max(mx, x[j]);
  return mx;
}

template <typename T>
T sum_contiguous(const T* x, std::size_t n) {
  T lanes[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += x[j + l];
  T total = 0;
  for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
  for (; j < n; ++j) total += x[j];
  return total;
}

template <typename T>
T dot_contiguous(const T* x, const T* y, std::size_t n) {
  T lanes[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes)
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += x[j + l] * y[j + l];
  T total = 0;
  for (std::size_t l = 0; l < kLanes; ++l) total += lanes[l];
  for (; j < n; ++j) total += x[j] * y[j];
  return total;
}

// Softmax over `groups` independent sets of `n` entries; entry j of group k
// lives at offset k * group_stride + j * elem_stride.
template <typename T>
void softmax_forward(const T* in, T* out, std::size_t groups, std::size_t n,
                     std::size_t group_stride, std::size_t elem_stride) {
  std::vector<T> buf(elem_stride == 1 ? 0 : n);
  for (std::size_t k = 0; k < groups; ++k) {
    const T* src = in + k * group_stride;
    T* dst = out + k * group_stride;
    T* work = elem_stride == 1 ? dst : buf.data();
    if (elem_stride == 1) {
      const T mx = max_contiguous(src, n);
      for (std::size_t j = 0; j < n; ++j) work[j] = src[j] - mx;
    } else {
      T mx = src[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, src[j * elem_stride]);
      for (std::size_t j = 0; j < n; ++j) work[j] = src[j * elem_stride] - mx;
    }
    exp_inplace(work, n);
    const T inv = T(1) / sum_contiguous(work, n);
    for (std::size_t j = 0; j < n; ++j) dst[j * elem_stride] = work[j] * inv;
  }
}

template <typename T>
void softmax_backward(const T* y, const T* gy, T* gx, std::size_t groups, std::size_t n,
                      std::size_t group_stride, std::size_t elem_stride) {
  for (std::size_t k = 0; k < groups; ++k) {
    const std::size_t base = k * group_stride;
    if (elem_stride == 1) {
      const T dot = dot_contiguous(y + base, gy + base, n);
      for (std::size_t j = 0; j < n; ++j) gx[base + j] += y[base + j] * (gy[base + j] - dot);
      continue;
    }
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t idx = base + j * elem_stride;
      dot += y[idx] * gy[idx];
    }
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t idx = base + j * elem_stride;
      gx[idx] += y[idx] * (gy[idx] - dot);
    }
  }
}

template <typename T>
Tensor<T> softmax_strided(const Tensor<T>& input, std::size_t groups, std::size_t n,
                          std::size_t group_stride, std::size_t elem_stride, Tape<T>* tape) {
  Tensor<T> out(input.shape());
  softmax_forward(input.ptr(), out.ptr(), groups, n, group_stride, elem_stride);
  if (should_record(tape, input)) {
    out.set_requires_grad(true);
    tape->record([input, out, groups, n, group_stride, elem_stride]() mutable {
      softmax_backward(out.ptr(), out.grad().data(), input.grad().data(), groups, n, group_stride,
                       elem_stride);
    });
  }
  return out;
}

}  // namespace

void ConvSpec::validate() const {
  if (kernel_h < 1 || kernel_w < 1) throw ConfigError("ConvSpec: kernel dims must be >= 1");
  if (stride < 1) throw ConfigError("ConvSpec: stride must be >= 1");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("ConvSpec: channel counts must be >= 1");
}

template <>
void exp_inplace<double>(double* values, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) values[i] = std::exp(values[i]);
}

// Range reduction to [-ln2/2, ln2/2] and a degree-6 polynomial; relative error
// below 2e-7 on the softmax domain. Written branch-free so it vectorizes.
template <>
void exp_inplace<float>(float* values, std::size_t n) {
  constexpr float log2e = 1.44269504088896341f;
  constexpr float ln2_hi = 0.693359375f;
  constexpr float ln2_lo = -2.12194440e-4f;
  for (std::size_t i = 0; i < n; ++i) {
    float x = std::clamp(values[i], -87.0f, 88.0f);
    const float k = std::floor(x * log2e + 0.5f);
    float r = x - k * ln2_hi;
    r = r - k * ln2_lo;
    float p = 1.9875691500e-4f;
    p = p * r + 1.3981999507e-3f;
    p = p * r + 8.3334519073e-3f;
    p = p * r + 4.1665795894e-2f;
    p = p * r + 1.6666665459e-1f;
    p = p * r + 5.0000001201e-1f;
    p = p * r * r + r + 1.0f;
    const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(k) + 127) << 23;
    values[i] = p * std::bit_cast<float>(bits);
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  require_rank("matmul", a.shape(), 2, "left operand");
  require_rank("matmul", b.shape(), 2, "right operand");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    dim_error("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " * " +
                            shape_str(b.shape()));
  Tensor<T> out(Shape{m, n});
  detail::gemm(false, false, m, n, k, T(1), a.ptr(), k, b.ptr(), n, T(0), out.ptr(), n);
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out, m, n, k]() mutable {
      const T* g = out.grad().data();
      if (a.requires_grad())
        detail::gemm(false, true, m, k, n, T(1), g, n, b.ptr(), n, T(1), a.grad().data(), k);
      if (b.requires_grad())
        detail::gemm(true, false, k, n, m, T(1), a.ptr(), k, g, n, T(1), b.grad().data(), n);
    });
  }
  return out;
}

namespace {

constexpr std::size_t kAttnBlock = 64;
constexpr std::size_t kSkinny = 16;

template <typename T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return out;
}

// out (nr x s) = x (nr x m, leading dim m) * yt (m x s). Skinny m uses
// row-wise axpy passes, which vectorize over s; wider m goes to gemm.
template <typename T>
void skinny_product(const T* x, std::size_t nr, std::size_t m, const T* yt, std::size_t s, T* out) {
  if (m > kSkinny) {
    detail::gemm(false, false, nr, s, m, T(1), x, m, yt, s, T(0), out, s);
    return;
  }
  for (std::size_t i = 0; i < nr; ++i) {
    T* row = out + i * s;
    const T* xi = x + i * m;
    std::fill(row, row + s, T(0));
    for (std::size_t c = 0; c < m; ++c) {
      const T coef = xi[c];
      const T* src = yt + c * s;
      for (std::size_t j = 0; j < s; ++j) row[j] += coef * src[j];
    }
  }
}

template <typename T>
void softmax_row_inplace(T* row, std::size_t n) {
  const T mx = max_contiguous(row, n);
  for (std::size_t j = 0; j < n; ++j) row[j] -= mx;
  exp_inplace(row, n);
  const T inv = T(1) / sum_contiguous(row, n);
  for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

}  // namespace

template <typename T>
AttentionResult<T> attention(const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& v,
                             bool keep_weights, Tape<T>* tape) {
  require_rank("attention", a.shape(), 2, "row operand");
  require_rank("attention", b.shape(), 2, "column operand");
  require_rank("attention", v.shape(), 2, "values");
  const std::size_t t = a.dim(0), m = a.dim(1), s = b.dim(0), p = v.dim(1);
  if (b.dim(1) != m)
    dim_error("attention", "operands differ in width: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (v.dim(0) != s)
    dim_error("attention", "values " + shape_str(v.shape()) + " do not match " + std::to_string(s) + " columns");

  const bool record = should_record(tape, a, b, v);
  const bool store = keep_weights || record;
  const auto bt = transposed(b.ptr(), s, m);
  AttentionResult<T> res;
  res.out = Tensor<T>(Shape{t, p});
  std::vector<T> scratch(store ? 0 : kAttnBlock * s);
  if (store) res.weights = Tensor<T>(Shape{t, s});
  const T* ap = a.ptr();
  T* op = res.out.ptr();
  for (std::size_t i0 = 0; i0 < t; i0 += kAttnBlock) {
    const std::size_t nr = std::min(kAttnBlock, t - i0);
    T* z = store ? res.weights.ptr() + i0 * s : scratch.data();
    skinny_product(ap + i0 * m, nr, m, bt.data(), s, z);
    for (std::size_t i = 0; i < nr; ++i) softmax_row_inplace(z + i * s, s);
    detail::gemm(false, false, nr, p, s, T(1), z, s, v.ptr(), p, T(0), op + i0 * p, p);
  }

  if (record) {
    res.out.set_requires_grad(true);
    auto out = res.out;
    auto w = res.weights;
    tape->record([a, b, v, out, w, t, m, s, p]() mutable {
      const T* gr = out.grad().data();
      const T* beta = w.ptr();
      const T* r = out.ptr();
      const auto vt = transposed(v.ptr(), s, p);
      std::vector<T> dz(kAttnBlock * s);
      for (std::size_t i0 = 0; i0 < t; i0 += kAttnBlock) {
        const std::size_t nr = std::min(kAttnBlock, t - i0);
        const T* bblk = beta + i0 * s;
        const T* gblk = gr + i0 * p;
        if (v.requires_grad())
          detail::gemm(true, false, s, p, nr, T(1), bblk, s, gblk, p, T(1), v.grad().data(), p);
        if (!a.requires_grad() && !b.requires_grad()) continue;
        // d(weights) = gr * v^T, then through the row softmax; the row dot
        // sum_j beta_ij d(weights)_ij equals gr_i . r_i.
        skinny_product(gblk, nr, p, vt.data(), s, dz.data());
        for (std::size_t i = 0; i < nr; ++i) {
          T dot = 0;
          for (std::size_t c = 0; c < p; ++c) dot += gblk[i * p + c] * r[(i0 + i) * p + c];
          T* dzi = dz.data() + i * s;
          const T* bi = bblk + i * s;
          for (std::size_t j = 0; j < s; ++j) dzi[j] = bi[j] * (dzi[j] - dot);
        }
        if (a.requires_grad())
          detail::gemm(false, false, nr, m, s, T(1), dz.data(), s, b.ptr(), m, T(1),
                       a.grad().data() + i0 * m, m);
        if (b.requires_grad())
          detail::gemm(true, false, s, m, nr, T(1), dz.data(), s, a.ptr() + i0 * m, m, T(1),
                       b.grad().data(), m);
      }
    });
  }
  if (!keep_weights) res.weights = Tensor<T>();
  return res;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, Tape<T>* tape) {
  require_rank("transpose", x.shape(), 2, "input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor<T> out(Shape{n, m});
  const T* src = x.ptr();
  T* dst = out.ptr();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, m, n]() mutable {
      const T* g = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                 std::size_t stride, Padding padding, Tape<T>* tape) {
  require_rank("conv2d", input.shape(), 3, "input");
  require_rank("conv2d", weights.shape(), 4, "weights");
  require_rank("conv2d", bias.shape(), 1, "bias");
  const auto& ws = weights.shape();
  if (ws[2] != input.dim(2))
    dim_error("conv2d", "input has " + std::to_string(input.dim(2)) + " channels but weights " +
                            shape_str(ws) + " expect " + std::to_string(ws[2]));
  if (bias.dim(0) != ws[3])
    dim_error("conv2d", "bias " + shape_str(bias.shape()) + " does not match " +
                            std::to_string(ws[3]) + " output channels");
  const auto g = conv_geometry("conv2d", input.dim(0), input.dim(1), input.dim(2), ws[0], ws[1],
                               ws[3], stride, padding);
  return conv_core("conv2d", g, input, weights, bias, false, tape);
}

template <typename T>
Tensor<T> conv3d_collapse(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                          Tape<T>* tape) {
  require_rank("conv3d_collapse", input.shape(), 3, "input");
  require_rank("conv3d_collapse", kernels.shape(), 4, "kernels");
  require_rank("conv3d_collapse", bias.shape(), 1, "bias");
  const auto& ks = kernels.shape();
  if (ks[1] != 3 || ks[2] != 3)
    dim_error("conv3d_collapse", "kernels must be K x 3 x 3 x d, got " + shape_str(ks));
  if (ks[3] != input.dim(2))
    dim_error("conv3d_collapse", "kernel depth " + std::to_string(ks[3]) +
                                     " does not match input depth " + std::to_string(input.dim(2)));
  if (bias.dim(0) != ks[0])
    dim_error("conv3d_collapse", "bias " + shape_str(bias.shape()) + " does not match K=" +
                                     std::to_string(ks[0]));
  const auto g = conv_geometry("conv3d_collapse", input.dim(0), input.dim(1), input.dim(2), 3, 3,
                               ks[0], 1, Padding::same);
  return conv_core("conv3d_collapse", g, input, kernels, bias, true, tape);
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, Tape<T>* tape) {
  require_rank("maxpool2d", input.shape(), 3, "input");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h % 2 || w % 2)
    dim_error("maxpool2d", "spatial dims must be even, got " + shape_str(input.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{ho, wo, c});
  auto argmax = std::make_shared<std::vector<std::size_t>>(ho * wo * c);
  const T* in = input.ptr();
  T* o = out.ptr();
  for (std::size_t oy = 0; oy < ho; ++oy)
    for (std::size_t ox = 0; ox < wo; ++ox)
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = ((2 * oy) * w + 2 * ox) * c + ch;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t oi = (oy * wo + ox) * c + ch;
        o[oi] = in[best];
        (*argmax)[oi] = best;
      }
  if (should_record(tape, input)) {
    out.set_requires_grad(true);
    tape->record([input, out, argmax]() mutable {
      const auto g = out.grad();
      auto gi = input.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gi[(*argmax)[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& input, Tape<T>* tape) {
  require_rank("softmax_rows", input.shape(), 2, "input");
  const std::size_t m = input.dim(0), n = input.dim(1);
  return softmax_strided(input, m, n, n, 1, tape);
}

template <typename T>
Tensor<T> softmax_spatial(const Tensor<T>& input, Tape<T>* tape) {
  if (input.rank() == 2) return softmax_strided(input, 1, input.numel(), 0, 1, tape);
  if (input.rank() == 3) {
    const std::size_t c = input.dim(2);
    return softmax_strided(input, c, input.dim(0) * input.dim(1), 1, c, tape);
  }
  dim_error("softmax_spatial", "input must be h x w or h x w x C, got " + shape_str(input.shape()));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x, Tape<T>* tape) {
  Tensor<T> out(x.shape());
  const T* src = x.ptr();
  T* dst = out.ptr();
  for (std::size_t i = 0, n_ = x.numel(); i < n_; ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      const T* g = out.grad().data();
      const T* v = x.ptr();
      T* gx = x.grad().data();
      for (std::size_t i = 0, n_ = x.numel(); i < n_; ++i)
        if (v[i] > T(0)) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias,
                Tape<T>* tape) {
  require_rank("dense", x.shape(), 1, "input");
  require_rank("dense", weights.shape(), 2, "weights");
  require_rank("dense", bias.shape(), 1, "bias");
  const std::size_t n = x.dim(0), m = weights.dim(1);
  if (weights.dim(0) != n)
    dim_error("dense", "input " + shape_str(x.shape()) + " does not match weights " +
                           shape_str(weights.shape()));
  if (bias.dim(0) != m)
    dim_error("dense", "bias " + shape_str(bias.shape()) + " does not match weights " +
                           shape_str(weights.shape()));
  Tensor<T> out(Shape{m});
  std::copy(bias.ptr(), bias.ptr() + m, out.ptr());
  detail::gemm(false, false, 1, m, n, T(1), x.ptr(), n, weights.ptr(), m, T(1), out.ptr(), m);
  if (should_record(tape, x, weights, bias)) {
    out.set_requires_grad(true);
    tape->record([x, weights, bias, out, n, m]() mutable {
      const T* g = out.grad().data();
      if (weights.requires_grad())
        detail::gemm(true, false, n, m, 1, T(1), x.ptr(), n, g, m, T(1), weights.grad().data(), m);
      if (bias.requires_grad()) {
        T* gb = bias.grad().data();
        for (std::size_t j = 0; j < m; ++j) gb[j] += g[j];
      }
      if (x.requires_grad())
        detail::gemm(false, true, 1, n, m, T(1), g, m, weights.ptr(), m, T(1), x.grad().data(), n);
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts, Tape<T>* tape) {
  if (parts.empty()) dim_error("concat_channels", "no inputs");
  const Shape& first = parts.front().shape();
  const Shape lead(first.begin(), first.end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
      dim_error("concat_channels", "leading dims differ: " + shape_str(first) + " vs " + shape_str(s));
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  Tensor<T> out(out_shape);
  const std::size_t rows = shape_numel(lead);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const T* src = parts[p].ptr();
    T* dst = out.ptr();
    const std::size_t wdt = widths[p];
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(src + r * wdt, src + (r + 1) * wdt, dst + r * total + offset);
    offset += wdt;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape != nullptr && any) {
    out.set_requires_grad(true);
    tape->record([parts, out, widths, rows, total]() mutable {
      const T* g = out.grad().data();
      std::size_t off = 0;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        const std::size_t wdt = widths[p];
        if (parts[p].requires_grad()) {
          T* gp = parts[p].grad().data();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < wdt; ++c) gp[r * wdt + c] += g[r * total + off + c];
        }
        off += wdt;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t begin, std::size_t end, Tape<T>* tape) {
  const Shape& s = x.shape();
  const std::size_t c = s.back();
  if (begin >= end || end > c)
    dim_error("slice_channels", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                    ") invalid for " + shape_str(s));
  Shape out_shape = s;
  out_shape.back() = end - begin;
  Tensor<T> out(out_shape);
  const std::size_t rows = x.numel() / c, wdt = end - begin;
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(x.ptr() + r * c + begin, x.ptr() + r * c + end, out.ptr() + r * wdt);
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, rows, c, begin, wdt]() mutable {
      const T* g = out.grad().data();
      T* gx = x.grad().data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < wdt; ++j) gx[r * c + begin + j] += g[r * wdt + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape, Tape<T>* tape) {
  if (shape_numel(shape) != x.numel())
    dim_error("reshape", "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable { accumulate<T>(x.grad(), out.grad()); });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.shape() != b.shape())
    dim_error("add", "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0, n_ = a.numel(); i < n_; ++i) out[i] = a[i] + b[i];
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      if (a.requires_grad()) accumulate<T>(a.grad(), out.grad());
      if (b.requires_grad()) accumulate<T>(b.grad(), out.grad());
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.shape() != b.shape())
    dim_error("mul", "shapes differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> out(a.shape());
  for (std::size_t i = 0, n_ = a.numel(); i < n_; ++i) out[i] = a[i] * b[i];
  if (should_record(tape, a, b)) {
    out.set_requires_grad(true);
    tape->record([a, b, out]() mutable {
      const auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c, Tape<T>* tape) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0, n_ = x.numel(); i < n_; ++i) out[i] = x[i] * c;
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, c]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c;
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, const Tensor<T>& s, Tape<T>* tape) {
  if (s.numel() != 1) dim_error("scale", "scale factor must have one element, got " + shape_str(s.shape()));
  const T c = s[0];
  Tensor<T> out(x.shape());
  for (std::size_t i = 0, n_ = x.numel(); i < n_; ++i) out[i] = x[i] * c;
  if (should_record(tape, x, s)) {
    out.set_requires_grad(true);
    tape->record([x, s, out]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[0];
      }
      if (s.requires_grad()) {
        T acc = 0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * x[i];
        s.grad()[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& map, Tape<T>* tape) {
  require_rank("mul_spatial", x.shape(), 3, "input");
  require_rank("mul_spatial", map.shape(), 2, "map");
  if (map.dim(0) != x.dim(0) || map.dim(1) != x.dim(1))
    dim_error("mul_spatial", "map " + shape_str(map.shape()) + " does not match " + shape_str(x.shape()));
  const std::size_t hw = map.numel(), c = x.dim(2);
  Tensor<T> out(x.shape());
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[p * c + ch] = x[p * c + ch] * map[p];
  if (should_record(tape, x, map)) {
    out.set_requires_grad(true);
    tape->record([x, map, out, hw, c]() mutable {
      const auto g = out.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t ch = 0; ch < c; ++ch) gx[p * c + ch] += g[p * c + ch] * map[p];
      }
      if (map.requires_grad()) {
        auto gm = map.grad();
        for (std::size_t p = 0; p < hw; ++p) {
          T acc = 0;
          for (std::size_t ch = 0; ch < c; ++ch) acc += g[p * c + ch] * x[p * c + ch];
          gm[p] += acc;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum_channels(const Tensor<T>& x, Tape<T>* tape) {
  require_rank("sum_channels", x.shape(), 3, "input");
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  Tensor<T> out(Shape{x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < hw; ++p) {
    T acc = 0;
    for (std::size_t ch = 0; ch < c; ++ch) acc += x[p * c + ch];
    out[p] = acc;
  }
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, hw, c]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t p = 0; p < hw; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) gx[p * c + ch] += g[p];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape) {
  T acc = 0;
  for (auto v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out]() mutable {
      const T g = out.grad()[0];
      for (auto& v : x.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool train, Rng* rng, Tape<T>* tape) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  if (!train || rate == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout in training mode needs a random generator");
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  for (auto& m : *mask) m = rng->uniform() < rate ? T(0) : keep_scale;
  Tensor<T> out(x.shape());
  for (std::size_t i = 0, n_ = x.numel(); i < n_; ++i) out[i] = x[i] * (*mask)[i];
  if (should_record(tape, x)) {
    out.set_requires_grad(true);
    tape->record([x, out, mask]() mutable {
      const auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                       Tape<T>* tape) {
  require_rank("channel_norm", x.shape(), 3, "input");
  const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
  if (gamma.numel() != c || beta.numel() != c)
    dim_error("channel_norm", "gain/shift must have " + std::to_string(c) + " entries");
  constexpr T eps = T(1e-5);
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(c);
  Tensor<T> out(x.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    T mean = 0;
    for (std::size_t p = 0; p < hw; ++p) mean += x[p * c + ch];
    mean /= static_cast<T>(hw);
    T var = 0;
    for (std::size_t p = 0; p < hw; ++p) {
      const T d = x[p * c + ch] - mean;
      var += d * d;
    }
    var /= static_cast<T>(hw);
    const T is = T(1) / std::sqrt(var + eps);
    (*inv_std)[ch] = is;
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t i = p * c + ch;
      (*xhat)[i] = (x[i] - mean) * is;
      out[i] = gamma[ch] * (*xhat)[i] + beta[ch];
    }
  }
  if (should_record(tape, x, gamma, beta)) {
    out.set_requires_grad(true);
    tape->record([x, gamma, beta, out, xhat, inv_std, hw, c]() mutable {
      const auto g = out.grad();
      for (std::size_t ch = 0; ch < c; ++ch) {
        T sum_g = 0, sum_gx = 0;
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t i = p * c + ch;
          sum_g += g[i];
          sum_gx += g[i] * (*xhat)[i];
        }
        if (gamma.requires_grad()) gamma.grad()[ch] += sum_gx;
        if (beta.requires_grad()) beta.grad()[ch] += sum_g;
        if (x.requires_grad()) {
          auto gx = x.grad();
          const T k = gamma[ch] * (*inv_std)[ch] / static_cast<T>(hw);
          for (std::size_t p = 0; p < hw; ++p) {
            const std::size_t i = p * c + ch;
            gx[i] += k * (static_cast<T>(hw) * g[i] - sum_g - (*xhat)[i] * sum_gx);
          }
        }
      }
    });
  }
  return out;
}

#define WV_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                      \
  template Tensor<T> transpose(const Tensor<T>&, Tape<T>*);                                     \
  template AttentionResult<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                        bool, Tape<T>*);                                        \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,  \
                            Padding, Tape<T>*);                                                 \
  template Tensor<T> conv3d_collapse(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                     Tape<T>*);                                                 \
  template Tensor<T> maxpool2d(const Tensor<T>&, Tape<T>*);                                     \
  template Tensor<T> softmax_rows(const Tensor<T>&, Tape<T>*);                                  \
  template Tensor<T> softmax_spatial(const Tensor<T>&, Tape<T>*);                               \
  template Tensor<T> relu(const Tensor<T>&, Tape<T>*);                                          \
  template Tensor<T> dense(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);     \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&, Tape<T>*);                  \
  template Tensor<T> slice_channels(const Tensor<T>&, std::size_t, std::size_t, Tape<T>*);      \
  template Tensor<T> reshape(const Tensor<T>&, Shape, Tape<T>*);                                \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                         \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                         \
  template Tensor<T> mul_scalar(const Tensor<T>&, T, Tape<T>*);                                 \
  template Tensor<T> scale(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                       \
  template Tensor<T> mul_spatial(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                 \
  template Tensor<T> sum_channels(const Tensor<T>&, Tape<T>*);                                  \
  template Tensor<T> sum(const Tensor<T>&, Tape<T>*);                                           \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng*, Tape<T>*);                   \
  template Tensor<T> channel_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);

WV_INSTANTIATE_OPS(float)
WV_INSTANTIATE_OPS(double)

#undef WV_INSTANTIATE_OPS

}  // namespace wv::nn
