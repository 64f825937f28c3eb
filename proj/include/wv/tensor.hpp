#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "wv/error.hpp"

namespace wv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, the way a graph
/// node is referenced from several places. clone() makes an independent copy.
/// Operations never mutate their inputs; they produce new tensors.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<T> data();
  std::span<const T> data() const;
  T* ptr() { return data().data(); }
  const T* ptr() const { return data().data(); }
  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }
  T item() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  void set_requires_grad(bool enabled);
  /// The gradient buffer belongs to the shared node, so it stays writable
  /// through const handles captured by backward rules.
  std::span<T> grad() const;
  void zero_grad();

  Tensor clone() const;
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    const auto src = data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
    return Tensor<U>(shape(), std::move(out), requires_grad());
  }

  bool same_storage(const Tensor& other) const noexcept { return node_ == other.node_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  void check_defined() const;

  std::shared_ptr<Node> node_;
};

/// Ordered record of backward rules for one forward pass.
template <typename T>
class Tape {
 public:
  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const noexcept { return rules_.size(); }
  void clear() noexcept { rules_.clear(); }

  /// Seeds d(loss)/d(loss) = 1 and replays the rules in reverse order.
  /// Gradients accumulate into existing buffers; callers zero them between steps.
  void backward(const Tensor<T>& loss);

 private:
  std::vector<std::function<void()>> rules_;
};

/// True when an op must record a backward rule: a tape is present and at
/// least one input needs a gradient.
template <typename T, typename... Ts>
bool should_record(const Tape<T>* tape, const Ts&... inputs) {
  return tape != nullptr && (inputs.requires_grad() || ...);
}

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace wv
