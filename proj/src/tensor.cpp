#include "wv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace wv {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
  for (auto d : shape)
    if (d == 0) throw DimensionError("tensor dimension sizes must be positive, got " + shape_str(shape));
}
}  // namespace

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) : node_(std::make_shared<Node>()) {
  validate_shape(shape);
  node_->data.assign(shape_numel(shape), fill);
  node_->shape = std::move(shape);
  set_requires_grad(requires_grad);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size())
    throw DimensionError("tensor of shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  node_->shape = std::move(shape);
  node_->data = std::move(values);
  set_requires_grad(requires_grad);
}

template <typename T>
void Tensor<T>::check_defined() const {
  if (!node_) throw ContractError("use of an undefined tensor");
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  check_defined();
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  return s[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  check_defined();
  return node_->data.size();
}

template <typename T>
std::span<T> Tensor<T>::data() {
  check_defined();
  return node_->data;
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  check_defined();
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ContractError("item() on a tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool enabled) {
  check_defined();
  node_->requires_grad = enabled;
  if (enabled && node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), T(0));
  if (!enabled) {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

template <typename T>
std::span<T> Tensor<T>::grad() const {
  if (!requires_grad()) throw ContractError("grad() on a tensor that does not require grad");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), node_->data, false);
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  if (!loss.requires_grad())
    throw ContractError("backward() on a loss that does not depend on any trainable tensor");
  loss.grad()[0] += T(1);
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

}  // namespace wv
