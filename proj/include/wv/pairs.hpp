#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "wv/manifest.hpp"

namespace wv {

struct PairSplit {
  std::vector<PairRecord> train;
  std::vector<PairRecord> test;
};

struct AndPairOptions {
  std::size_t folds = 5;
  std::size_t fold_index = 0;
  std::size_t neg_ratio = 10;
  std::uint64_t seed = 0;
  /// Split writers instead of samples so no writer spans train and test.
  bool writer_disjoint = false;
};

/// Word-sample protocol: samples are shuffled and cut into folds; inside each
/// split every same-writer pair is enumerated and neg_ratio times as many
/// cross-writer pairs are drawn uniformly without replacement.
PairSplit make_pairs_and(const Manifest& manifest, const AndPairOptions& options);

struct SignaturePairOptions {
  std::size_t folds = 11;
  std::size_t fold_index = 0;
  std::uint64_t seed = 0;
};

/// Signature protocol: writers are cut into folds; per writer all
/// genuine-genuine pairs (label 1) and all genuine-forgery pairs (label 0).
PairSplit make_pairs_signature(const Manifest& manifest, const SignaturePairOptions& options);

}  // namespace wv
