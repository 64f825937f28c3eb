#include "wv/adam.hpp"

#include <cmath>

namespace wv {

double decayed_lr(double lr, double decay, std::uint64_t step) {
  return lr / (1.0 + decay * static_cast<double>(step));
}

template <typename T>
void adam_step(std::map<std::string, Tensor<T>>& params, AdamState<T>& state, double lr_now) {
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.empty()) {
      m.assign(p.numel(), T(0));
      v.assign(p.numel(), T(0));
    }
    if (m.size() != p.numel() || v.size() != p.numel())
      throw DimensionError("adam: moment buffers for '" + name + "' do not match " + shape_str(p.shape()));
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    auto& m = state.m[name];
    auto& v = state.v[name];
    auto values = p.data();
    const auto g = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) / bc1;
      const double v_hat = static_cast<double>(v[i]) / bc2;
      values[i] -= static_cast<T>(lr_now * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

template void adam_step(std::map<std::string, Tensor<float>>&, AdamState<float>&, double);
template void adam_step(std::map<std::string, Tensor<double>>&, AdamState<double>&, double);

}  // namespace wv
