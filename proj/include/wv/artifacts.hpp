#pragma once

#include <cstddef>
#include <vector>

#include "wv/tensor.hpp"

namespace wv {

/// Attention maps captured from one forward pass, stored at 64-bit regardless
/// of the model's precision.
struct AttentionArtifacts {
  /// One t x t matrix per cross-attention head, in head order. Row i is the
  /// distribution of query location i over key locations.
  std::vector<Tensor<double>> ca_maps;
  /// For each head, which input supplied the keys: 0 = image A, 1 = image B.
  std::vector<int> ca_key_image;
  std::size_t ca_height = 0;
  std::size_t ca_width = 0;

  /// One h x w spatial score map per soft-attention layer.
  std::vector<Tensor<double>> sa_maps;
  std::size_t sa_heads = 0;

  bool has_ca() const noexcept { return !ca_maps.empty(); }
  bool has_sa() const noexcept { return !sa_maps.empty(); }
};

}  // namespace wv
