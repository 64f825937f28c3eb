#pragma once

#include "wv/tensor.hpp"

namespace wv {

struct FocalConfig {
  double alpha = 0.75;
  double gamma = 2.0;
  void validate() const;
};

struct LossConfig {
  enum class Kind { cce, focal };
  Kind kind = Kind::focal;
  FocalConfig focal;
};

/// p_t is clamped to this floor before taking the log.
inline constexpr double kProbFloor = 1e-12;

/// -log(p_t).
double cce_value(double p_t);
/// -alpha_t (1 - p_t)^gamma log(p_t), alpha_t = alpha for label 1, 1 - alpha for label 0.
double focal_value(double p_t, int label, const FocalConfig& cfg);

/// Differentiable losses on a two-class probability vector. p_t = probs[label].
template <typename T>
Tensor<T> cce_loss(const Tensor<T>& probs, int label, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, int label, const FocalConfig& cfg, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> loss(const Tensor<T>& probs, int label, const LossConfig& cfg, Tape<T>* tape = nullptr);

}  // namespace wv
