#include "wv/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "wv/adam.hpp"
#include "wv/ops.hpp"
#include "wv/rng.hpp"

namespace wv {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lr_decay >= 0.0)) throw ConfigError("lr_decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (max_epochs == 0) throw ConfigError("max_epochs must be positive");
  if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
  if (loss.kind == LossConfig::Kind::focal) loss.focal.validate();
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << kTrainLogHeader << '\n';
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.8g,%.8g,%.4f,%.2f,%.2f,%.2f\n", e.epoch, e.train_loss,
                  e.val_loss, e.val.f1, e.val.far_pct, e.val.frr_pct, e.val.acc_pct);
    os << buf;
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write train log: " + path.string());
  f << to_csv();
  if (!f) throw IoError("failed writing train log: " + path.string());
}

template <typename T>
TrainLog fit(VerifierModel<T>& model, const std::vector<PairRecord>& train,
             const std::vector<PairRecord>& val, const TrainConfig& cfg,
             const std::filesystem::path& ckpt_path, ImageStore<T>& store,
             const std::type_identity_t<EpochCallback<T>>& on_epoch, std::size_t eval_threads) {
  cfg.validate();
  if (train.empty()) throw ContractError("fit() needs training pairs");
  if (val.empty()) throw ContractError("fit() needs validation pairs");

  Rng rng(cfg.seed);
  Rng shuffle_rng = rng.split();
  Rng dropout_rng = rng.split();
  AdamState<T> adam;
  TrainLog log;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t since_best = 0;
  const T inv_batch_full = T(1) / static_cast<T>(cfg.batch_size);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle(order.begin(), order.end(), shuffle_rng);
    model.set_train_mode(true);
    double loss_sum = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const T inv_batch = end - begin == cfg.batch_size ? inv_batch_full : T(1) / static_cast<T>(end - begin);
      model.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        const auto& p = train[order[k]];
        const auto& a = store.get(p.path_a);
        const auto& b = store.get(p.path_b);
        Tape<T> tape;
        auto out = forward(model, a, b, false, &tape, &dropout_rng);
        auto l = loss(out.probs, p.label, cfg.loss, &tape);
        const double value = static_cast<double>(l.item());
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite loss at epoch " << epoch << ", step " << adam.step << ", pair ("
              << p.path_a.string() << ", " << p.path_b.string() << "), probs [" << out.probs[0]
              << ", " << out.probs[1] << "]";
          throw TrainingError(msg.str());
        }
        loss_sum += value;
        auto scaled = nn::mul_scalar(l, inv_batch, &tape);
        tape.backward(scaled);
      }
      adam_step(model.params(), adam, decayed_lr(cfg.lr, cfg.lr_decay, adam.step));
    }
    model.set_train_mode(false);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train.size());
    const auto ev = evaluate(model, val, store, eval_threads, cfg.loss);
    rec.val_loss = ev.mean_loss;
    rec.val = ev.report;
    if (!std::isfinite(rec.val_loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
    log.epochs.push_back(rec);

    if (log.best_epoch == 0 || rec.val_loss < log.best_val_loss) {
      log.best_epoch = epoch;
      log.best_val_loss = rec.val_loss;
      since_best = 0;
      save_checkpoint(model, ckpt_path);
    } else {
      ++since_best;
    }
    if (on_epoch && !on_epoch(rec, model)) break;
    if (since_best > 0 && since_best >= cfg.patience) {
      log.early_stopped = true;
      break;
    }
  }
  return log;
}

template TrainLog fit(VerifierModel<float>&, const std::vector<PairRecord>&,
                      const std::vector<PairRecord>&, const TrainConfig&, const std::filesystem::path&,
                      ImageStore<float>&, const EpochCallback<float>&, std::size_t);
template TrainLog fit(VerifierModel<double>&, const std::vector<PairRecord>&,
                      const std::vector<PairRecord>&, const TrainConfig&, const std::filesystem::path&,
                      ImageStore<double>&, const EpochCallback<double>&, std::size_t);

}  // namespace wv
