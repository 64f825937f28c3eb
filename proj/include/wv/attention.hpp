#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "wv/ops.hpp"
#include "wv/tensor.hpp"

namespace wv::attn {

/// Which side indexes the rows of the relevance matrix. query_major computes
/// z = q k^T so row i is query location i attending over key locations.
/// literal computes z = k q^T as the formula is printed, kept for comparison.
enum class IndexOrder { query_major, literal };

template <typename T>
struct Conv1x1 {
  Tensor<T> weight;  // 1 x 1 x in x out
  Tensor<T> bias;    // out
  std::size_t in_channels() const { return weight.dim(2); }
  std::size_t out_channels() const { return weight.dim(3); }
};

/// Projections of one cross-attention head.
template <typename T>
struct CAHeadParams {
  Conv1x1<T> query;   // L: d -> d_qk
  Conv1x1<T> key;     // M: d -> d_qk
  Conv1x1<T> value;   // N: d -> d_v
  Conv1x1<T> output;  // V: d_v -> d_out

  std::size_t d_qk() const { return query.out_channels(); }
  std::size_t d_v() const { return value.out_channels(); }
  std::size_t d_out() const { return output.out_channels(); }
  /// Throws DimensionError when the projections are mutually inconsistent or
  /// do not accept `d` input channels.
  void validate(std::size_t d) const;
};

template <typename T>
struct CAHeadOutput {
  Tensor<T> out;                // h' x w' x d_out
  std::optional<Tensor<T>> beta;  // t x t, present iff captured
};

template <typename T>
CAHeadOutput<T> ca_head(const Tensor<T>& query_feat, const Tensor<T>& key_feat,
                        const CAHeadParams<T>& params, bool capture, Tape<T>* tape = nullptr,
                        IndexOrder order = IndexOrder::query_major);

/// Heads [0, n/2) take image 1 as key and image 2 as query; heads [n/2, n)
/// swap the roles. Each head has its own weights.
template <typename T>
struct MHCAParams {
  std::vector<CAHeadParams<T>> heads;
  std::size_t n() const { return heads.size(); }
};

template <typename T>
struct MHCAOutput {
  Tensor<T> out;                 // h' x w' x 2d
  std::vector<Tensor<T>> betas;  // per head, empty unless captured
};

template <typename T>
MHCAOutput<T> mhca(const Tensor<T>& f1, const Tensor<T>& f2, const MHCAParams<T>& params,
                   bool capture, Tape<T>* tape = nullptr,
                   IndexOrder order = IndexOrder::query_major);

/// Build-time check for a head layout: n even and dividing 2d.
void validate_head_layout(std::size_t d, std::size_t n_heads);

template <typename T>
struct SAParams {
  Tensor<T> kernels;  // K x 3 x 3 x d
  Tensor<T> bias;     // K
  Tensor<T> omega;    // single learnable scalar, shape {1}
  std::size_t heads() const { return kernels.dim(0); }
};

template <typename T>
struct SAOutput {
  Tensor<T> out;                  // h x w x d
  std::optional<Tensor<T>> zeta;  // h x w, sums to K
};

/// o = f + omega * (f scaled per location by zeta), where zeta is the sum of
/// K spatial softmaxes of the depth-collapsing 3D convolution of f.
template <typename T>
SAOutput<T> soft_attention(const Tensor<T>& f, const SAParams<T>& params, bool capture,
                           Tape<T>* tape = nullptr);

}  // namespace wv::attn
