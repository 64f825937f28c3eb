#include "wv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace wv {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::uint64_t parse_count(const std::string& s) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw FormatError("report count field is not an integer: '" + s + "'");
  return std::stoull(s);
}

}  // namespace

EvalReport EvalReport::from_counts(std::uint64_t tp, std::uint64_t fp, std::uint64_t tn, std::uint64_t fn) {
  EvalReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  auto ratio = [](std::uint64_t num, std::uint64_t den, bool& undefined) {
    undefined = den == 0;
    return undefined ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };
  r.precision = ratio(tp, tp + fp, r.precision_undefined);
  r.recall = ratio(tp, tp + fn, r.recall_undefined);
  r.f1_undefined = r.precision + r.recall == 0.0;
  r.f1 = r.f1_undefined ? 0.0 : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  r.far_pct = 100.0 * ratio(fp, fp + tn, r.far_undefined);
  r.frr_pct = 100.0 * ratio(fn, fn + tp, r.frr_undefined);
  r.accuracy = ratio(tp + tn, r.total(), r.acc_undefined);
  r.acc_pct = 100.0 * r.accuracy;
  return r;
}

EvalReport report_from_predictions(std::span<const int> labels, std::span<const int> predicted) {
  if (labels.size() != predicted.size())
    throw DimensionError("labels and predictions differ in length");
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pos = labels[i] == 1, pred = predicted[i] == 1;
    tp += pos && pred;
    fn += pos && !pred;
    fp += !pos && pred;
    tn += !pos && !pred;
  }
  return EvalReport::from_counts(tp, fp, tn, fn);
}

template <typename T>
Evaluation evaluate(const VerifierModel<T>& model, const std::vector<PairRecord>& pairs,
                    ImageStore<T>& store, std::size_t threads, const LossConfig& loss_cfg) {
  if (model.train_mode()) throw ContractError("evaluate() needs the model in eval mode");
  if (pairs.empty()) throw ContractError("evaluate() needs at least one pair");
  for (const auto& p : pairs) {
    try {
      store.get(p.path_a);
      store.get(p.path_b);
    } catch (const Error& e) {
      throw InputError("pair (" + p.path_a.string() + ", " + p.path_b.string() + "): " + e.what());
    }
  }
  Evaluation ev;
  ev.predictions.resize(pairs.size());
  ev.likelihoods.resize(pairs.size());
  std::vector<double> losses(pairs.size());

  const auto& cstore = store;
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& p = pairs[i];
      const auto out = forward(model, cstore.find(p.path_a), cstore.find(p.path_b), false);
      ev.likelihoods[i] = static_cast<double>(out.probs[1]);
      ev.predictions[i] = out.probs[1] > out.probs[0] ? 1 : 0;
      losses[i] = static_cast<double>(loss(out.probs, p.label, loss_cfg).item());
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, pairs.size());
  if (threads == 1) {
    work(0, pairs.size());
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back(work, t * pairs.size() / threads, (t + 1) * pairs.size() / threads);
    for (auto& th : pool) th.join();
  }

  std::vector<int> labels;
  labels.reserve(pairs.size());
  for (const auto& p : pairs) labels.push_back(p.label);
  ev.report = report_from_predictions(labels, ev.predictions);
  double total = 0;
  for (double l : losses) total += l;
  ev.mean_loss = total / static_cast<double>(pairs.size());
  return ev;
}

std::string report_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os << r.tp << ',' << r.fp << ',' << r.tn << ',' << r.fn << ',' << fixed(r.precision, 4) << ','
     << fixed(r.recall, 4) << ',' << fixed(r.f1, 4) << ',' << fixed(r.far_pct, 2) << ','
     << fixed(r.frr_pct, 2) << ',' << fixed(r.acc_pct, 2);
  return os.str();
}

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "pairs: " << r.total() << " (tp " << r.tp << ", fp " << r.fp << ", tn " << r.tn << ", fn "
     << r.fn << ")\n"
     << "F-1 " << fixed(r.f1, 2) << "  P " << fixed(r.precision, 2) << "  R " << fixed(r.recall, 2)
     << "  FAR " << fixed(r.far_pct, 2) << "  FRR " << fixed(r.frr_pct, 2) << "  Acc "
     << fixed(r.acc_pct, 2) << '\n';
  std::vector<std::string> undefined;
  if (r.precision_undefined) undefined.emplace_back("precision");
  if (r.recall_undefined) undefined.emplace_back("recall");
  if (r.f1_undefined) undefined.emplace_back("f1");
  if (r.far_undefined) undefined.emplace_back("far");
  if (r.frr_undefined) undefined.emplace_back("frr");
  if (r.acc_undefined) undefined.emplace_back("acc");
  os << "undefined:";
  for (const auto& u : undefined) os << ' ' << u;
  if (undefined.empty()) os << " none";
  os << '\n';
  return os.str();
}

void write_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write report: " + path.string());
  f << kReportHeader << '\n' << report_csv_row(report) << '\n';
  std::istringstream text(format_report(report));
  for (std::string line; std::getline(text, line);) f << "# " << line << '\n';
  if (!f) throw IoError("failed writing report: " + path.string());
}

// Derived metrics are recomputed from the exact counts; the rounded values in
// the file must agree with them, and the undefined flags must match.
EvalReport parse_report(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read report: " + path.string());
  std::string header, row, line;
  std::getline(f, header);
  std::getline(f, row);
  if (header != kReportHeader) throw FormatError("unexpected report header in " + path.string());
  const auto fields = split_csv_line(row);
  if (fields.size() != 10) throw FormatError("report row must have 10 fields: " + path.string());
  auto r = EvalReport::from_counts(parse_count(fields[0]), parse_count(fields[1]),
                                   parse_count(fields[2]), parse_count(fields[3]));
  const auto expected = split_csv_line(report_csv_row(r));
  for (std::size_t i = 4; i < fields.size(); ++i)
    if (fields[i] != expected[i])
      throw FormatError("report field " + std::to_string(i) + " ('" + fields[i] +
                        "') disagrees with its counts in " + path.string());
  std::string flags;
  while (std::getline(f, line))
    if (line.rfind("# undefined:", 0) == 0) flags = line.substr(2);
  std::istringstream expected_text(format_report(r));
  std::string expected_flags;
  for (std::string l; std::getline(expected_text, l);)
    if (l.rfind("undefined:", 0) == 0) expected_flags = l;
  if (!flags.empty() && flags != expected_flags)
    throw FormatError("report undefined-metric flags disagree with counts in " + path.string());
  return r;
}

template Evaluation evaluate(const VerifierModel<float>&, const std::vector<PairRecord>&,
                             ImageStore<float>&, std::size_t, const LossConfig&);
template Evaluation evaluate(const VerifierModel<double>&, const std::vector<PairRecord>&,
                             ImageStore<double>&, std::size_t, const LossConfig&);

}  // namespace wv
