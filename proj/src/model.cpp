#include "wv/model.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "json.hpp"
#include "wv/ops.hpp"

namespace wv {

namespace {

constexpr std::array<std::pair<Variant, std::string_view>, 5> kVariantNames{{
    {Variant::concat_baseline, "concat_baseline"},
    {Variant::concat_sa, "concat_sa"},
    {Variant::siamese_baseline, "siamese_baseline"},
    {Variant::siamese_ca_sa, "siamese_ca_sa"},
    {Variant::siamese_mhca_sa, "siamese_mhca_sa"},
}};

std::string head_prefix(std::size_t i) { return "ca.h" + std::to_string(i); }

class ParamBuilder {
 public:
  explicit ParamBuilder(std::uint64_t seed) : rng_(seed) {}

  void uniform(const std::string& name, Shape shape, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng_.uniform(-bound, bound);
    values_.emplace_back(name, std::move(shape), std::move(v));
  }
  void constant(const std::string& name, Shape shape, double value) {
    std::vector<double> v(shape_numel(shape), value);
    values_.emplace_back(name, std::move(shape), std::move(v));
  }
  void conv(const std::string& name, std::size_t k, std::size_t cin, std::size_t cout) {
    uniform(name + ".w", Shape{k, k, cin, cout}, k * k * cin);
    constant(name + ".b", Shape{cout}, 0.0);
  }
  void dense(const std::string& name, std::size_t n, std::size_t m) {
    uniform(name + ".w", Shape{n, m}, n);
    constant(name + ".b", Shape{m}, 0.0);
  }
  void norm(const std::string& name, std::size_t c) {
    constant(name + ".gamma", Shape{c}, 1.0);
    constant(name + ".beta", Shape{c}, 0.0);
  }

  template <typename T>
  typename VerifierModel<T>::ParamMap finish() const {
    typename VerifierModel<T>::ParamMap out;
    for (const auto& [name, shape, v] : values_) {
      std::vector<T> cast(v.begin(), v.end());
      if (!out.emplace(name, Tensor<T>(shape, std::move(cast), true)).second)
        throw ConfigError("duplicate parameter name " + name);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::tuple<std::string, Shape, std::vector<double>>> values_;
};

// Geometry shared by build and forward.
struct Layout {
  std::size_t in_channels;   // stem input channels: 1 (Siamese) or 2 (Concat)
  bool extra_stem_block;     // ca_placement 16: stem runs down to 16 x 16
  std::size_t fuse_in;       // channels entering the fuse convolution
  std::size_t ca_heads;
  std::size_t head_in;       // channels after the SA / pool block
};

Layout layout_of(const ArchConfig& a) {
  Layout l{};
  l.in_channels = a.siamese() ? 1 : 2;
  l.extra_stem_block = a.ca_placement == 16;
  l.ca_heads = a.ca_heads();
  const std::size_t c1 = a.stem_channels;
  if (!a.siamese())
    l.fuse_in = c1;
  else
    l.fuse_in = l.ca_heads ? 4 * c1 : 2 * c1;
  l.head_in = a.uses_sa() ? 2 * a.mid_channels : a.mid_channels;
  return l;
}

template <typename T>
struct Pass {
  const VerifierModel<T>& model;
  Tape<T>* tape;
  Rng* rng;
  bool train;

  const Tensor<T>& p(const std::string& name) const { return model.param(name); }

  Tensor<T> conv_relu(const Tensor<T>& x, const std::string& name) const {
    return nn::relu(nn::conv2d(x, p(name + ".w"), p(name + ".b"), 1, nn::Padding::same, tape), tape);
  }
  Tensor<T> drop(const Tensor<T>& x) const {
    return nn::dropout(x, model.arch().dropout_rate, train, rng, tape);
  }
  Tensor<T> norm(const Tensor<T>& x, const std::string& name) const {
    return nn::channel_norm(x, p(name + ".gamma"), p(name + ".beta"), tape);
  }
  Tensor<T> post_concat(const Tensor<T>& x) const {
    return model.arch().attention_norm ? nn::relu(x, tape) : x;
  }

  Tensor<T> stem(const Tensor<T>& x) const {
    auto h = conv_relu(x, "stem.conv1");
    h = nn::maxpool2d(conv_relu(h, "stem.conv2"), tape);
    if (model.arch().ca_placement == 16) h = nn::maxpool2d(conv_relu(h, "stem.conv3"), tape);
    return h;
  }
};

template <typename T>
attn::MHCAParams<T> mhca_params(const VerifierModel<T>& m, std::size_t n) {
  attn::MHCAParams<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto pre = head_prefix(i);
    auto c = [&](const char* s) {
      return attn::Conv1x1<T>{m.param(pre + "." + s + ".w"), m.param(pre + "." + s + ".b")};
    };
    out.heads.push_back({c("L"), c("M"), c("N"), c("V")});
  }
  return out;
}

void check_image(const std::string& which, const Shape& s, std::size_t channels) {
  if (s != Shape{kInputSize, kInputSize, channels})
    throw DimensionError(which + " must be 64x64x" + std::to_string(channels) + ", got " +
                         shape_str(s));
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& [var, name] : kVariantNames)
    if (var == v) return name;
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (const auto& [var, n] : kVariantNames)
    if (n == name) return var;
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected concat_baseline, concat_sa, siamese_baseline, siamese_ca_sa, "
                    "siamese_mhca_sa)");
}

bool ArchConfig::siamese() const {
  return variant != Variant::concat_baseline && variant != Variant::concat_sa;
}

bool ArchConfig::uses_sa() const {
  return variant == Variant::concat_sa || variant == Variant::siamese_ca_sa ||
         variant == Variant::siamese_mhca_sa;
}

std::size_t ArchConfig::ca_heads() const {
  if (variant == Variant::siamese_ca_sa) return 2;
  if (variant == Variant::siamese_mhca_sa) return n_heads;
  return 0;
}

void ArchConfig::validate() const {
  if (stem_channels == 0 || mid_channels == 0 || head_channels == 0 || dense_units == 0)
    throw ConfigError("channel widths and dense_units must be positive");
  if (sa_heads == 0) throw ConfigError("sa_heads must be at least 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw ConfigError("dropout_rate must lie in [0, 1)");
  if (ca_placement != 32 && ca_placement != 16)
    throw ConfigError("ca_placement must be 32 or 16, got " + std::to_string(ca_placement));
  if (ca_heads() > 0) attn::validate_head_layout(stem_channels, ca_heads());
}

std::string ArchConfig::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = std::string(variant_name(variant));
  j["stem_channels"] = stem_channels;
  j["mid_channels"] = mid_channels;
  j["head_channels"] = head_channels;
  j["n_heads"] = n_heads;
  j["sa_heads"] = sa_heads;
  j["dropout_rate"] = dropout_rate;
  j["ca_placement"] = ca_placement;
  j["dense_units"] = dense_units;
  j["attention_norm"] = attention_norm;
  j["ca_index_order"] = ca_index_order == attn::IndexOrder::query_major ? "query_major" : "literal";
  return j.dump();
}

ArchConfig ArchConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    ArchConfig a;
    a.variant = parse_variant(j.at("variant").get<std::string>());
    a.stem_channels = j.at("stem_channels").get<std::size_t>();
    a.mid_channels = j.at("mid_channels").get<std::size_t>();
    a.head_channels = j.at("head_channels").get<std::size_t>();
    a.n_heads = j.at("n_heads").get<std::size_t>();
    a.sa_heads = j.at("sa_heads").get<std::size_t>();
    a.dropout_rate = j.at("dropout_rate").get<double>();
    a.ca_placement = j.at("ca_placement").get<std::size_t>();
    a.dense_units = j.at("dense_units").get<std::size_t>();
    a.attention_norm = j.at("attention_norm").get<bool>();
    const auto order = j.at("ca_index_order").get<std::string>();
    if (order != "query_major" && order != "literal")
      throw FormatError("unknown ca_index_order '" + order + "'");
    a.ca_index_order = order == "literal" ? attn::IndexOrder::literal : attn::IndexOrder::query_major;
    a.validate();
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("architecture block: ") + e.what());
  }
}

template <typename T>
VerifierModel<T>::VerifierModel(ArchConfig arch, ParamMap params)
    : arch_(std::move(arch)), params_(std::move(params)) {}

template <typename T>
const Tensor<T>& VerifierModel<T>::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("model has no parameter '" + name + "'");
  return it->second;
}

template <typename T>
std::size_t VerifierModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.numel();
  return n;
}

template <typename T>
void VerifierModel<T>::zero_grad() {
  for (auto& [_, t] : params_) t.zero_grad();
}

template <typename T>
VerifierModel<T> build_model(const ArchConfig& arch, std::uint64_t seed) {
  arch.validate();
  const auto l = layout_of(arch);
  const std::size_t c1 = arch.stem_channels, c2 = arch.mid_channels, c3 = arch.head_channels;
  ParamBuilder b(seed);
  b.conv("stem.conv1", 3, l.in_channels, c1);
  b.conv("stem.conv2", 3, c1, c1);
  if (l.extra_stem_block) b.conv("stem.conv3", 3, c1, c1);
  if (l.ca_heads > 0) {
    const std::size_t d = c1, n = l.ca_heads;
    const std::size_t d_qk = std::max<std::size_t>(1, d / 8), d_v = 2 * d / n;
    for (std::size_t i = 0; i < n; ++i) {
      const auto pre = head_prefix(i);
      b.conv(pre + ".L", 1, d, d_qk);
      b.conv(pre + ".M", 1, d, d_qk);
      b.conv(pre + ".N", 1, d, d_v);
      b.conv(pre + ".V", 1, d_v, d_v);
    }
    if (arch.attention_norm) b.norm("ca.norm", 2 * d);
  }
  b.conv("fuse.conv", 3, l.fuse_in, c2);
  if (!l.extra_stem_block) b.conv("mid.conv", 3, c2, c2);
  if (arch.uses_sa()) {
    b.uniform("sa.kernels", Shape{arch.sa_heads, 3, 3, c2}, 9 * c2);
    b.constant("sa.bias", Shape{arch.sa_heads}, 0.0);
    b.constant("sa.omega", Shape{1}, 0.0);
    if (arch.attention_norm) b.norm("sa.norm", c2);
  }
  b.conv("head.conv", 3, l.head_in, c3);
  b.dense("fc1", 16 * c3, arch.dense_units);
  b.dense("fc2", arch.dense_units, 2);
  return VerifierModel<T>(arch, b.finish<T>());
}

template <typename T>
Tensor<T> stem_features(const VerifierModel<T>& model, const Tensor<T>& img, Tape<T>* tape) {
  if (!model.arch().siamese()) throw ContractError("stem_features applies to Siamese variants");
  check_image("image", img.shape(), 1);
  Pass<T> pass{model, tape, nullptr, false};
  return pass.stem(img);
}

template <typename T>
ForwardOutput<T> forward(const VerifierModel<T>& model, const Tensor<T>& img_a,
                         const Tensor<T>& img_b, bool capture, Tape<T>* tape, Rng* rng) {
  const auto& arch = model.arch();
  check_image("image A", img_a.shape(), 1);
  check_image("image B", img_b.shape(), 1);
  const bool train = model.train_mode();
  if (train && arch.dropout_rate > 0.0 && rng == nullptr)
    throw ContractError("training-mode forward needs a random generator for dropout");
  Pass<T> pass{model, tape, rng, train};
  ForwardOutput<T> result;

  Tensor<T> fused;
  if (arch.siamese()) {
    auto f1 = pass.stem(img_a);
    auto f2 = pass.stem(img_b);
    std::vector<Tensor<T>> parts{f1, f2};
    const std::size_t n = arch.ca_heads();
    if (n > 0) {
      auto ca = attn::mhca(f1, f2, mhca_params(model, n), capture, tape, arch.ca_index_order);
      auto ca_out = arch.attention_norm ? pass.norm(ca.out, "ca.norm") : ca.out;
      parts.push_back(ca_out);
      if (capture) {
        result.artifacts.ca_height = f1.dim(0);
        result.artifacts.ca_width = f1.dim(1);
        for (std::size_t i = 0; i < n; ++i) {
          result.artifacts.ca_maps.push_back(ca.betas[i].template cast<double>());
          result.artifacts.ca_key_image.push_back(i < n / 2 ? 0 : 1);
        }
      }
    }
    fused = pass.post_concat(nn::concat_channels(parts, tape));
  } else {
    fused = pass.stem(nn::concat_channels(std::vector<Tensor<T>>{img_a, img_b}, tape));
  }

  auto x = pass.drop(pass.conv_relu(fused, "fuse.conv"));
  if (arch.ca_placement != 16) x = nn::maxpool2d(pass.conv_relu(x, "mid.conv"), tape);

  if (arch.uses_sa()) {
    attn::SAParams<T> sa{model.param("sa.kernels"), model.param("sa.bias"), model.param("sa.omega")};
    auto s = attn::soft_attention(x, sa, capture, tape);
    auto s_out = arch.attention_norm ? pass.norm(s.out, "sa.norm") : s.out;
    if (capture) {
      result.artifacts.sa_maps.push_back(s.zeta->template cast<double>());
      result.artifacts.sa_heads = arch.sa_heads;
    }
    x = pass.post_concat(nn::concat_channels(
        std::vector<Tensor<T>>{nn::maxpool2d(s_out, tape), nn::maxpool2d(x, tape)}, tape));
  } else {
    x = nn::maxpool2d(x, tape);
  }
  x = pass.drop(x);

  x = nn::maxpool2d(pass.conv_relu(x, "head.conv"), tape);
  auto h = pass.drop(nn::relu(nn::dense(nn::flatten(x, tape), model.param("fc1.w"),
                                        model.param("fc1.b"), tape), tape));
  auto logits = nn::dense(h, model.param("fc2.w"), model.param("fc2.b"), tape);
  auto probs = nn::softmax_rows(nn::reshape(logits, Shape{1, 2}, tape), tape);
  result.probs = nn::reshape(probs, Shape{2}, tape);
  return result;
}

template class VerifierModel<float>;
template class VerifierModel<double>;
template VerifierModel<float> build_model(const ArchConfig&, std::uint64_t);
template VerifierModel<double> build_model(const ArchConfig&, std::uint64_t);
template Tensor<float> stem_features(const VerifierModel<float>&, const Tensor<float>&, Tape<float>*);
template Tensor<double> stem_features(const VerifierModel<double>&, const Tensor<double>&, Tape<double>*);
template ForwardOutput<float> forward(const VerifierModel<float>&, const Tensor<float>&,
                                      const Tensor<float>&, bool, Tape<float>*, Rng*);
template ForwardOutput<double> forward(const VerifierModel<double>&, const Tensor<double>&,
                                       const Tensor<double>&, bool, Tape<double>*, Rng*);

}  // namespace wv
