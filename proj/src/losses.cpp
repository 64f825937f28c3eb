#include "wv/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace wv {

namespace {

void check_probs(const char* op, const Shape& s, int label) {
  if (s != Shape{2}) throw DimensionError(std::string(op) + ": expected 2 probabilities, got " + shape_str(s));
  if (label != 0 && label != 1) throw ContractError(std::string(op) + ": label must be 0 or 1");
}

// d(loss)/d(p_t) for the focal loss at an unclamped p_t.
double focal_derivative(double p, double alpha_t, double gamma) {
  const double one_minus = 1.0 - p;
  const double lp = std::log(p);
  const double modulating = std::pow(one_minus, gamma);
  double d_mod = 0.0;
  if (gamma != 0.0 && one_minus > 0.0) d_mod = -gamma * std::pow(one_minus, gamma - 1.0);
  return -alpha_t * (d_mod * lp + modulating / p);
}

template <typename T, typename Value, typename Deriv>
Tensor<T> scalar_loss(const Tensor<T>& probs, int label, Tape<T>* tape, Value value, Deriv deriv) {
  const double raw = static_cast<double>(probs[static_cast<std::size_t>(label)]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(value(raw)));
  if (should_record(tape, probs)) {
    out.set_requires_grad(true);
    tape->record([probs, out, label, raw, deriv]() mutable {
      // The clamp is flat below the floor, so no gradient flows there.
      if (raw < kProbFloor) return;
      probs.grad()[static_cast<std::size_t>(label)] += out.grad()[0] * static_cast<T>(deriv(raw));
    });
  }
  return out;
}

}  // namespace

void FocalConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("focal alpha must lie in (0, 1)");
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
}

double cce_value(double p_t) { return -std::log(std::max(p_t, kProbFloor)); }

double focal_value(double p_t, int label, const FocalConfig& cfg) {
  const double p = std::max(p_t, kProbFloor);
  const double alpha_t = label == 1 ? cfg.alpha : 1.0 - cfg.alpha;
  return -alpha_t * std::pow(1.0 - p, cfg.gamma) * std::log(p);
}

template <typename T>
Tensor<T> cce_loss(const Tensor<T>& probs, int label, Tape<T>* tape) {
  check_probs("cce_loss", probs.shape(), label);
  return scalar_loss(probs, label, tape, [](double p) { return cce_value(p); },
                     [](double p) { return -1.0 / p; });
}

template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, int label, const FocalConfig& cfg, Tape<T>* tape) {
  check_probs("focal_loss", probs.shape(), label);
  cfg.validate();
  const double alpha_t = label == 1 ? cfg.alpha : 1.0 - cfg.alpha;
  const double gamma = cfg.gamma;
  return scalar_loss(probs, label, tape, [&](double p) { return focal_value(p, label, cfg); },
                     [alpha_t, gamma](double p) { return focal_derivative(p, alpha_t, gamma); });
}

template <typename T>
Tensor<T> loss(const Tensor<T>& probs, int label, const LossConfig& cfg, Tape<T>* tape) {
  return cfg.kind == LossConfig::Kind::cce ? cce_loss(probs, label, tape)
                                           : focal_loss(probs, label, cfg.focal, tape);
}

template Tensor<float> cce_loss(const Tensor<float>&, int, Tape<float>*);
template Tensor<double> cce_loss(const Tensor<double>&, int, Tape<double>*);
template Tensor<float> focal_loss(const Tensor<float>&, int, const FocalConfig&, Tape<float>*);
template Tensor<double> focal_loss(const Tensor<double>&, int, const FocalConfig&, Tape<double>*);
template Tensor<float> loss(const Tensor<float>&, int, const LossConfig&, Tape<float>*);
template Tensor<double> loss(const Tensor<double>&, int, const LossConfig&, Tape<double>*);

}  // namespace wv
