#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <type_traits>
#include <vector>

#include "wv/image_store.hpp"
#include "wv/losses.hpp"
#include "wv/manifest.hpp"
#include "wv/metrics.hpp"
#include "wv/model.hpp"

namespace wv {

struct TrainConfig {
  double lr = 1e-4;
  double lr_decay = 1e-6;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;
  LossConfig loss;
  std::uint64_t seed = 0;
  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  EvalReport val;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0;
  bool early_stopped = false;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Called after every epoch; returning false ends training.
template <typename T>
using EpochCallback = std::function<bool(const EpochRecord&, const VerifierModel<T>&)>;

/// Mini-batch Adam training. The checkpoint at `ckpt_path` is rewritten
/// whenever the validation loss improves, so it always holds the best model.
/// The model is left in the state of the last epoch, in eval mode.
template <typename T>
TrainLog fit(VerifierModel<T>& model, const std::vector<PairRecord>& train,
             const std::vector<PairRecord>& val, const TrainConfig& cfg,
             const std::filesystem::path& ckpt_path, ImageStore<T>& store,
             const std::type_identity_t<EpochCallback<T>>& on_epoch = {}, std::size_t eval_threads = 1);

inline constexpr const char* kTrainLogHeader = "epoch,train_loss,val_loss,val_f1,val_far,val_frr,val_acc";

}  // namespace wv
