#include "wv/pairs.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <unordered_set>

#include "wv/error.hpp"
#include "wv/rng.hpp"

namespace wv {

namespace {

void check_folds(std::size_t folds, std::size_t fold_index, std::size_t items, const char* what) {
  if (folds < 2) throw ConfigError("folds must be at least 2");
  if (fold_index >= folds)
    throw ConfigError("fold_index " + std::to_string(fold_index) + " out of range for " +
                      std::to_string(folds) + " folds");
  if (items < folds)
    throw ProtocolError("cannot split " + std::to_string(items) + " " + what + " into " +
                        std::to_string(folds) + " folds");
}

// [begin, end) of fold f when n items are cut into `folds` contiguous parts.
std::pair<std::size_t, std::size_t> fold_bounds(std::size_t n, std::size_t folds, std::size_t f) {
  return {f * n / folds, (f + 1) * n / folds};
}

std::vector<PairRecord> pairs_within(const Manifest& m, const std::vector<std::size_t>& members,
                                     std::size_t neg_ratio, Rng& rng, const char* split_name) {
  const std::size_t n = members.size();
  std::vector<PairRecord> out;
  std::uint64_t same_writer = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = m.samples[members[i]];
      const auto& b = m.samples[members[j]];
      if (a.writer_id == b.writer_id) {
        out.push_back({a.path, b.path, 1});
        ++same_writer;
      }
    }
  if (same_writer == 0)
    throw ProtocolError(std::string(split_name) + " split contains no intra-writer pairs");

  const std::uint64_t cross_total = static_cast<std::uint64_t>(n) * (n - 1) / 2 - same_writer;
  const std::uint64_t wanted = same_writer * neg_ratio;
  if (wanted > cross_total)
    throw ProtocolError(std::string(split_name) + " split needs " + std::to_string(wanted) +
                        " inter-writer pairs but only " + std::to_string(cross_total) + " exist");

  auto emit = [&](std::size_t i, std::size_t j) {
    out.push_back({m.samples[members[i]].path, m.samples[members[j]].path, 0});
  };
  if (wanted * 2 > cross_total) {
    std::vector<std::pair<std::size_t, std::size_t>> all;
    all.reserve(cross_total);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (m.samples[members[i]].writer_id != m.samples[members[j]].writer_id) all.emplace_back(i, j);
    shuffle(all.begin(), all.end(), rng);
    for (std::uint64_t k = 0; k < wanted; ++k) emit(all[k].first, all[k].second);
  } else {
    std::unordered_set<std::uint64_t> taken;
    while (taken.size() < wanted) {
      auto i = static_cast<std::size_t>(rng.below(n));
      auto j = static_cast<std::size_t>(rng.below(n));
      if (i == j || m.samples[members[i]].writer_id == m.samples[members[j]].writer_id) continue;
      if (i > j) std::swap(i, j);
      if (taken.insert(static_cast<std::uint64_t>(i) * n + j).second) emit(i, j);
    }
  }
  shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace

PairSplit make_pairs_and(const Manifest& manifest, const AndPairOptions& options) {
  manifest.validate();
  if (options.neg_ratio == 0) throw ConfigError("neg_ratio must be positive");
  Rng rng(options.seed);
  std::vector<std::size_t> train, test;

  if (!options.writer_disjoint) {
    check_folds(options.folds, options.fold_index, manifest.samples.size(), "samples");
    std::vector<std::size_t> order(manifest.samples.size());
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    const auto [lo, hi] = fold_bounds(order.size(), options.folds, options.fold_index);
    for (std::size_t i = 0; i < order.size(); ++i) (i >= lo && i < hi ? test : train).push_back(order[i]);
  } else {
    std::vector<std::string> writers;
    std::map<std::string, std::vector<std::size_t>> by_writer;
    for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
      auto& v = by_writer[manifest.samples[i].writer_id];
      if (v.empty()) writers.push_back(manifest.samples[i].writer_id);
      v.push_back(i);
    }
    check_folds(options.folds, options.fold_index, writers.size(), "writers");
    shuffle(writers.begin(), writers.end(), rng);
    const auto [lo, hi] = fold_bounds(writers.size(), options.folds, options.fold_index);
    for (std::size_t w = 0; w < writers.size(); ++w)
      for (auto i : by_writer[writers[w]]) (w >= lo && w < hi ? test : train).push_back(i);
  }

  Rng train_rng = rng.split();
  Rng test_rng = rng.split();
  PairSplit split;
  split.train = pairs_within(manifest, train, options.neg_ratio, train_rng, "train");
  split.test = pairs_within(manifest, test, options.neg_ratio, test_rng, "test");
  return split;
}

PairSplit make_pairs_signature(const Manifest& manifest, const SignaturePairOptions& options) {
  manifest.validate();
  if (!manifest.has_kind)
    throw ProtocolError("signature pairing needs a manifest with a kind column");
  struct Writer {
    std::vector<std::size_t> genuine, forgery;
  };
  std::vector<std::string> writers;
  std::map<std::string, Writer> by_writer;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const auto& s = manifest.samples[i];
    if (!by_writer.count(s.writer_id)) writers.push_back(s.writer_id);
    auto& w = by_writer[s.writer_id];
    (s.kind == SampleKind::genuine ? w.genuine : w.forgery).push_back(i);
  }
  for (const auto& [id, w] : by_writer)
    if (w.genuine.empty() || w.forgery.empty())
      throw ProtocolError("writer " + id + " lacks genuine or forgery samples");
  check_folds(options.folds, options.fold_index, writers.size(), "writers");

  Rng rng(options.seed);
  shuffle(writers.begin(), writers.end(), rng);
  const auto [lo, hi] = fold_bounds(writers.size(), options.folds, options.fold_index);

  PairSplit split;
  std::set<std::string> train_writers, test_writers;
  for (std::size_t k = 0; k < writers.size(); ++k) {
    const bool in_test = k >= lo && k < hi;
    (in_test ? test_writers : train_writers).insert(writers[k]);
    auto& dst = in_test ? split.test : split.train;
    const auto& w = by_writer[writers[k]];
    for (std::size_t i = 0; i < w.genuine.size(); ++i)
      for (std::size_t j = i + 1; j < w.genuine.size(); ++j)
        dst.push_back({manifest.samples[w.genuine[i]].path, manifest.samples[w.genuine[j]].path, 1});
    for (auto g : w.genuine)
      for (auto f : w.forgery)
        dst.push_back({manifest.samples[g].path, manifest.samples[f].path, 0});
  }
  for (const auto& w : test_writers)
    if (train_writers.count(w)) throw ProtocolError("writer " + w + " appears in both splits");
  return split;
}

}  // namespace wv
