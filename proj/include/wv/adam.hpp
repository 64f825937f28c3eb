#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "wv/tensor.hpp"

namespace wv {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

/// lr / (1 + decay * step).
double decayed_lr(double lr, double decay, std::uint64_t step);

/// One bias-corrected Adam update from the gradients held by `params`.
/// Moment buffers are created on first use; mismatched sizes are a
/// DimensionError.
template <typename T>
void adam_step(std::map<std::string, Tensor<T>>& params, AdamState<T>& state, double lr_now);

}  // namespace wv
