#include "wv/attention.hpp"

#include <string>

namespace wv::attn {

namespace {

template <typename T>
void check_conv1x1(const Conv1x1<T>& c, const char* name) {
  const auto& s = c.weight.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != 1)
    throw DimensionError(std::string("cross attention: projection ") + name +
                         " must be a 1x1 convolution, got weights " + shape_str(s));
  if (c.bias.rank() != 1 || c.bias.dim(0) != s[3])
    throw DimensionError(std::string("cross attention: projection ") + name + " bias mismatch");
}

template <typename T>
Tensor<T> project(const Tensor<T>& x, const Conv1x1<T>& c, Tape<T>* tape) {
  return nn::conv2d(x, c.weight, c.bias, 1, nn::Padding::same, tape);
}

}  // namespace

template <typename T>
void CAHeadParams<T>::validate(std::size_t d) const {
  check_conv1x1(query, "L");
  check_conv1x1(key, "M");
  check_conv1x1(value, "N");
  check_conv1x1(output, "V");
  if (query.in_channels() != d || key.in_channels() != d || value.in_channels() != d)
    throw DimensionError("cross attention: projections expect " + std::to_string(d) +
                         " input channels");
  if (query.out_channels() != key.out_channels())
    throw DimensionError("cross attention: L and M must project to the same width");
  if (output.in_channels() != value.out_channels())
    throw DimensionError("cross attention: V must consume the value width of N");
}

void validate_head_layout(std::size_t d, std::size_t n_heads) {
  if (n_heads == 0 || n_heads % 2 != 0)
    throw ConfigError("multi-head cross attention needs an even, positive head count, got " +
                      std::to_string(n_heads));
  if ((2 * d) % n_heads != 0)
    throw ConfigError("head count " + std::to_string(n_heads) + " does not divide 2d = " +
                      std::to_string(2 * d));
}

template <typename T>
CAHeadOutput<T> ca_head(const Tensor<T>& query_feat, const Tensor<T>& key_feat,
                        const CAHeadParams<T>& params, bool capture, Tape<T>* tape,
                        IndexOrder order) {
  if (query_feat.rank() != 3 || query_feat.shape() != key_feat.shape())
    throw DimensionError("cross attention: query " + shape_str(query_feat.shape()) +
                         " and key " + shape_str(key_feat.shape()) +
                         " features must share one h x w x d shape");
  params.validate(query_feat.dim(2));
  const std::size_t h = query_feat.dim(0), w = query_feat.dim(1), t = h * w;

  auto q = nn::reshape(project(query_feat, params.query, tape), Shape{t, params.d_qk()}, tape);
  auto k = nn::reshape(project(key_feat, params.key, tape), Shape{t, params.d_qk()}, tape);
  auto v = nn::reshape(project(key_feat, params.value, tape), Shape{t, params.d_v()}, tape);

  // beta = softmax_rows(q k^T) (or k q^T in literal order), r = beta v.
  auto att = order == IndexOrder::query_major ? nn::attention(q, k, v, capture, tape)
                                              : nn::attention(k, q, v, capture, tape);
  auto r = nn::reshape(att.out, Shape{h, w, params.d_v()}, tape);

  CAHeadOutput<T> result{project(r, params.output, tape), std::nullopt};
  if (capture) result.beta = att.weights;
  return result;
}

template <typename T>
MHCAOutput<T> mhca(const Tensor<T>& f1, const Tensor<T>& f2, const MHCAParams<T>& params,
                   bool capture, Tape<T>* tape, IndexOrder order) {
  if (f1.rank() != 3 || f1.shape() != f2.shape())
    throw DimensionError("multi-head cross attention: features " + shape_str(f1.shape()) +
                         " and " + shape_str(f2.shape()) + " must share one shape");
  const std::size_t d = f1.dim(2), n = params.n();
  validate_head_layout(d, n);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(n);
  MHCAOutput<T> result;
  for (std::size_t i = 0; i < n; ++i) {
    const bool keyed_on_first = i < n / 2;
    const auto& query = keyed_on_first ? f2 : f1;
    const auto& key = keyed_on_first ? f1 : f2;
    auto head = ca_head(query, key, params.heads[i], capture, tape, order);
    if (head.out.dim(2) != 2 * d / n)
      throw DimensionError("multi-head cross attention: head " + std::to_string(i) + " emits " +
                           std::to_string(head.out.dim(2)) + " channels, expected 2d/n = " +
                           std::to_string(2 * d / n));
    outputs.push_back(std::move(head.out));
    if (capture) result.betas.push_back(std::move(*head.beta));
  }
  result.out = nn::concat_channels(outputs, tape);
  return result;
}

template <typename T>
SAOutput<T> soft_attention(const Tensor<T>& f, const SAParams<T>& params, bool capture,
                           Tape<T>* tape) {
  if (params.omega.numel() != 1)
    throw DimensionError("soft attention: omega must be a single scalar");
  auto f3d = nn::conv3d_collapse(f, params.kernels, params.bias, tape);
  auto zeta = nn::sum_channels(nn::softmax_spatial(f3d, tape), tape);
  auto gated = nn::mul_spatial(f, zeta, tape);
  SAOutput<T> result{nn::add(f, nn::scale(gated, params.omega, tape), tape), std::nullopt};
  if (capture) result.zeta = zeta;
  return result;
}

#define WV_INSTANTIATE_ATTN(T)                                                                  \
  template struct CAHeadParams<T>;                                                              \
  template CAHeadOutput<T> ca_head(const Tensor<T>&, const Tensor<T>&, const CAHeadParams<T>&, \
                                   bool, Tape<T>*, IndexOrder);                                 \
  template MHCAOutput<T> mhca(const Tensor<T>&, const Tensor<T>&, const MHCAParams<T>&, bool,   \
                              Tape<T>*, IndexOrder);                                            \
  template SAOutput<T> soft_attention(const Tensor<T>&, const SAParams<T>&, bool, Tape<T>*);

WV_INSTANTIATE_ATTN(float)
WV_INSTANTIATE_ATTN(double)

#undef WV_INSTANTIATE_ATTN

}  // namespace wv::attn
