#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wv/image_store.hpp"
#include "wv/losses.hpp"
#include "wv/manifest.hpp"
#include "wv/model.hpp"

namespace wv {

/// Confusion counts with positive = same writer / genuine-genuine, plus the
/// derived metrics. FAR counts negatives accepted, FRR positives rejected.
/// A metric whose denominator is zero is reported as 0 and flagged.
struct EvalReport {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0, accuracy = 0;
  double far_pct = 0, frr_pct = 0, acc_pct = 0;
  bool precision_undefined = false, recall_undefined = false, f1_undefined = false;
  bool far_undefined = false, frr_undefined = false, acc_undefined = false;

  static EvalReport from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn);
  std::uint64_t total() const noexcept { return tp + fp + tn + fn; }
  bool operator==(const EvalReport&) const = default;
};

EvalReport report_from_predictions(std::span<const int> labels, std::span<const int> predicted);

struct Evaluation {
  EvalReport report;
  std::vector<int> predictions;
  std::vector<double> likelihoods;  // probs[1] per pair
  double mean_loss = 0;
};

/// Predicted class is the argmax of probs. The model must be in eval mode.
/// Forward passes are spread over `threads` workers.
template <typename T>
Evaluation evaluate(const VerifierModel<T>& model, const std::vector<PairRecord>& pairs,
                    ImageStore<T>& store, std::size_t threads = 1, const LossConfig& loss_cfg = {});

/// CSV header + row, followed by '#'-prefixed human-readable lines.
void write_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport parse_report(const std::filesystem::path& path);
std::string format_report(const EvalReport& report);
std::string report_csv_row(const EvalReport& report);
inline constexpr const char* kReportHeader = "tp,fp,tn,fn,precision,recall,f1,far_pct,frr_pct,acc_pct";

}  // namespace wv
