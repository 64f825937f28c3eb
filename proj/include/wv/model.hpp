#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "wv/artifacts.hpp"
#include "wv/attention.hpp"
#include "wv/rng.hpp"
#include "wv/tensor.hpp"

namespace wv {

enum class Variant { concat_baseline, concat_sa, siamese_baseline, siamese_ca_sa, siamese_mhca_sa };

std::string_view variant_name(Variant v);
/// Accepts the lowercase names, e.g. "siamese_mhca_sa".
Variant parse_variant(std::string_view name);

inline constexpr std::size_t kInputSize = 64;

struct ArchConfig {
  Variant variant = Variant::siamese_mhca_sa;
  std::size_t stem_channels = 32;   // c1
  std::size_t mid_channels = 64;    // c2
  std::size_t head_channels = 128;  // c3
  std::size_t n_heads = 8;
  std::size_t sa_heads = 8;  // K
  double dropout_rate = 0.5;
  std::size_t ca_placement = 32;  // side length of the grid cross attention runs on
  std::size_t dense_units = 256;
  bool attention_norm = false;  // normalize after attention layers, relu after concatenations
  attn::IndexOrder ca_index_order = attn::IndexOrder::query_major;

  bool siamese() const;
  bool uses_sa() const;
  /// 0 for variants without cross attention, 2 for the single CA pair.
  std::size_t ca_heads() const;
  void validate() const;

  std::string to_json() const;
  static ArchConfig from_json(std::string_view text);
  bool operator==(const ArchConfig&) const = default;
};

/// Named parameter set of one verifier. std::map keeps names unique and gives
/// the deterministic order used for serialization.
template <typename T>
class VerifierModel {
 public:
  using ParamMap = std::map<std::string, Tensor<T>>;

  VerifierModel(ArchConfig arch, ParamMap params);

  const ArchConfig& arch() const noexcept { return arch_; }
  const ParamMap& params() const noexcept { return params_; }
  ParamMap& params() noexcept { return params_; }
  const Tensor<T>& param(const std::string& name) const;
  bool has_param(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t parameter_count() const;

  bool train_mode() const noexcept { return train_mode_; }
  void set_train_mode(bool on) noexcept { train_mode_ = on; }
  void zero_grad();

  template <typename U>
  VerifierModel<U> cast() const {
    typename VerifierModel<U>::ParamMap out;
    for (const auto& [name, t] : params_) {
      auto c = t.template cast<U>();
      c.set_requires_grad(true);
      out.emplace(name, std::move(c));
    }
    VerifierModel<U> m(arch_, std::move(out));
    m.set_train_mode(train_mode_);
    return m;
  }

  /// Deep copy with independent storage.
  VerifierModel clone() const { return cast<T>(); }

 private:
  ArchConfig arch_;
  ParamMap params_;
  bool train_mode_ = false;
};

/// Fan-in scaled uniform initialization (bound sqrt(6 / fan_in)); biases and
/// omega start at zero. Values are drawn at 64-bit then rounded, so builds at
/// different precisions from one seed agree up to rounding.
template <typename T>
VerifierModel<T> build_model(const ArchConfig& arch, std::uint64_t seed);

template <typename T>
struct ForwardOutput {
  Tensor<T> probs;  // {2}; index 1 is the same-writer likelihood
  AttentionArtifacts artifacts;
};

/// Inputs are preprocessed 64 x 64 x 1 images. In train mode dropout is
/// active and needs `rng`.
template <typename T>
ForwardOutput<T> forward(const VerifierModel<T>& model, const Tensor<T>& img_a,
                         const Tensor<T>& img_b, bool capture, Tape<T>* tape = nullptr,
                         Rng* rng = nullptr);

/// Features of one image after the shared stem (Siamese variants only).
template <typename T>
Tensor<T> stem_features(const VerifierModel<T>& model, const Tensor<T>& img, Tape<T>* tape = nullptr);

/// Binary checkpoint; values are stored as 32-bit floats.
template <typename T>
void save_checkpoint(const VerifierModel<T>& model, const std::filesystem::path& path);
VerifierModel<float> load_checkpoint(const std::filesystem::path& path);

extern template class VerifierModel<float>;
extern template class VerifierModel<double>;

}  // namespace wv
