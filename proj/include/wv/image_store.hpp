#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "wv/image.hpp"
#include "wv/manifest.hpp"
#include "wv/preprocess.hpp"

namespace wv {

/// Preprocessed-image cache keyed by path. get() loads on first use;
/// after preload() the store can be read concurrently through find().
template <typename T>
class ImageStore {
 public:
  explicit ImageStore(PreprocessSpec spec = {}) : spec_(std::move(spec)) {}

  const Tensor<T>& get(const std::filesystem::path& path) {
    auto it = cache_.find(path);
    if (it != cache_.end()) return it->second;
    GrayImage img;
    try {
      img = read_pgm(path);
    } catch (const Error& e) {
      throw InputError(std::string("cannot load image ") + path.string() + ": " + e.what());
    }
    return cache_.emplace(path, preprocess<T>(img, spec_)).first->second;
  }

  void preload(const std::vector<PairRecord>& pairs) {
    for (const auto& p : pairs) {
      get(p.path_a);
      get(p.path_b);
    }
  }

  /// Lookup without loading; throws if the image was never loaded.
  const Tensor<T>& find(const std::filesystem::path& path) const {
    auto it = cache_.find(path);
    if (it == cache_.end()) throw ContractError("image not preloaded: " + path.string());
    return it->second;
  }

  void insert(const std::filesystem::path& path, Tensor<T> image) { cache_.insert_or_assign(path, std::move(image)); }
  const PreprocessSpec& spec() const noexcept { return spec_; }
  std::size_t size() const noexcept { return cache_.size(); }

 private:
  PreprocessSpec spec_;
  std::map<std::filesystem::path, Tensor<T>> cache_;
};

}  // namespace wv
