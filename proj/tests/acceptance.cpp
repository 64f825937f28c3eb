// Acceptance runner: one PASS/FAIL line per criterion.
//   acceptance --criterion <name|all> [--workdir DIR]

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "suites.hpp"
#include "support.hpp"
#include "wv/attnviz.hpp"
#include "wv/cli.hpp"
#include "wv/metrics.hpp"
#include "wv/pairs.hpp"
#include "wv/synth.hpp"
#include "wv/trainer.hpp"

using namespace wvtest;
namespace fs = std::filesystem;
namespace attn = wv::attn;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s.precision(digits);
  s << v;
  return s.str();
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
}

// ---------------------------------------------------------------- gradient

Outcome gradient(const fs::path&) {
  Outcome o;
  const auto t0 = Clock::now();
  const auto cases = run_op_gradient_suite(2024, 5, 1e-5);
  std::map<std::string, std::pair<double, std::size_t>> per_op;
  for (const auto& c : cases) {
    auto& [worst, n] = per_op[c.op];
    worst = std::max(worst, c.rel_error);
    ++n;
  }
  double worst_op = 0;
  std::string worst_name;
  for (const auto& [name, v] : per_op) {
    o.require(v.second >= 5, name + " checked on fewer than 5 shapes");
    if (v.first > worst_op) worst_op = v.first, worst_name = name;
    o.require(v.first <= 1e-4, name + " rel " + fmt(v.first));
  }
  o.detail << per_op.size() << " ops x 5 shapes, worst " << worst_name << " " << fmt(worst_op) << "; ";

  wv::Rng rng(7);
  auto model = wv::build_model<double>(reduced_arch(), 11);
  // Away from the zero initialization so the SA kernels carry gradient.
  model.params().at("sa.omega").data()[0] = 0.35;
  std::vector<std::pair<Tensor<double>, Tensor<double>>> batch;
  for (int i = 0; i < 2; ++i)
    batch.emplace_back(random_tensor({64, 64, 1}, rng, 0, 1), random_tensor({64, 64, 1}, rng, 0, 1));
  const auto e2e = check_model_gradients(model, batch, {1, 0}, 8, kModelFdStep);
  const auto coarse = check_model_gradients(model, batch, {1, 0}, 8, 1e-5);
  o.require(e2e.max_rel_error <= 1e-4, "reduced model rel " + fmt(e2e.max_rel_error) + " at " + e2e.worst_param);
  o.detail << "reduced model (c1=4, n=2, K=2) " << e2e.params_checked << " tensors, worst " << e2e.worst_param << " "
           << fmt(e2e.max_rel_error) << " at step " << fmt(kModelFdStep) << " (step 1e-5: " << fmt(coarse.max_rel_error)
           << " at " << coarse.worst_param << "); ";
  const auto e32 = check_model_gradients_f32(model, batch, {1, 0}, 4, kModelFdStep);
  o.require(e32.max_rel_error <= 1e-3, "32-bit rel " + fmt(e32.max_rel_error) + " at " + e32.worst_param);
  o.detail << "32-bit worst " << fmt(e32.max_rel_error) << "; ";

  const double secs = seconds_since(t0);
  o.require(secs < 300, "runtime " + fmt(secs) + " s");
  o.detail << fmt(secs) << " s";
  return o;
}

// ----------------------------------------------------------- normalization

template <typename T>
void check_ca_normalization(Outcome& o, wv::Rng& rng, double& worst_row, double& worst_hull) {
  const std::size_t h = 1 + rng.below(8), w = 1 + rng.below(8), d = 1 + rng.below(8);
  const std::size_t dqk = 1 + rng.below(4), dv = 1 + rng.below(4);
  const double spread = rng.uniform(0.1, 6.0);
  auto qf = random_tensor({h, w, d}, rng, -spread, spread), kf = random_tensor({h, w, d}, rng, -spread, spread);
  auto p = detail::head_params(d, dqk, dv, dv, rng);
  const bool literal = rng.below(2) == 1;
  attn::CAHeadParams<T> pt{{p.query.weight.cast<T>(), p.query.bias.cast<T>()},
                           {p.key.weight.cast<T>(), p.key.bias.cast<T>()},
                           {p.value.weight.cast<T>(), p.value.bias.cast<T>()},
                           {p.output.weight.cast<T>(), p.output.bias.cast<T>()}};
  auto res = attn::ca_head(qf.cast<T>(), kf.cast<T>(), pt, true, static_cast<wv::Tape<T>*>(nullptr),
                           literal ? attn::IndexOrder::literal : attn::IndexOrder::query_major);
  const auto beta = res.beta->template cast<double>();
  const std::size_t t = h * w;
  for (std::size_t i = 0; i < t; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < t; ++j) s += beta[i * t + j];
    worst_row = std::max(worst_row, std::abs(s - 1));
  }
  // r = beta v is a convex combination of the value vectors.
  const auto v = oracle::pointwise(kf, p.value.weight, p.value.bias);
  const auto r = oracle::matmul(beta, wv::nn::reshape(v, Shape{t, dv}));
  for (std::size_t c = 0; c < dv; ++c) {
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t j = 0; j < t; ++j) lo = std::min(lo, v[j * dv + c]), hi = std::max(hi, v[j * dv + c]);
    const double tol = 1e-6 * (1 + std::max(std::abs(lo), std::abs(hi)));
    for (std::size_t i = 0; i < t; ++i) {
      const double x = r[i * dv + c];
      worst_hull = std::max(worst_hull, std::max(lo - x, x - hi));
      o.require(x >= lo - tol && x <= hi + tol, "r outside the value hull");
    }
  }
}

Outcome normalization(const fs::path&) {
  Outcome o;
  wv::Rng rng(99);
  double row64 = 0, row32 = 0, hull64 = -INFINITY, hull32 = -INFINITY;
  for (int i = 0; i < 100; ++i) check_ca_normalization<double>(o, rng, row64, hull64);
  for (int i = 0; i < 100; ++i) check_ca_normalization<float>(o, rng, row32, hull32);
  o.require(row64 <= 1e-5 && row32 <= 1e-5, "beta row sums");
  o.detail << "beta rows |sum-1| max " << fmt(row64) << " (64-bit), " << fmt(row32) << " (32-bit) over 200 CA inputs; "
           << "hull excess " << fmt(std::max(hull64, hull32)) << "; ";

  double zeta_err = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t h = 2 + rng.below(15), w = 2 + rng.below(15), d = 1 + rng.below(8), K = 1 + rng.below(8);
    auto f = random_tensor<float>({h, w, d}, rng, -3, 3);
    attn::SAParams<float> p{random_tensor<float>({K, 3, 3, d}, rng), random_tensor<float>({K}, rng),
                            Tensor<float>::scalar(0.5f)};
    const auto z = *attn::soft_attention(f, p, true).zeta;
    double s = 0;
    for (float v : z.data()) s += v;
    zeta_err = std::max(zeta_err, std::abs(s - static_cast<double>(K)));
  }
  o.require(zeta_err <= 1e-4, "zeta sums");
  o.detail << "zeta |sum-K| max " << fmt(zeta_err) << "; ";

  double soft_err = 0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t rows = 1 + rng.below(8), cols = 1 + rng.below(1500);
    const double scale = rng.uniform(0.1, 40);
    auto z = random_tensor<float>({rows, cols}, rng, -scale, scale);
    auto p = wv::nn::softmax_rows(z);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) s += p[r * cols + c];
      soft_err = std::max(soft_err, std::abs(s - 1));
    }
    auto sp = wv::nn::softmax_spatial(random_tensor<float>({1 + rng.below(20), 1 + rng.below(20), 3}, rng, -scale, scale));
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (std::size_t i2 = 0; i2 < sp.dim(0) * sp.dim(1); ++i2) s += sp[i2 * 3 + c];
      soft_err = std::max(soft_err, std::abs(s - 1));
    }
  }
  o.require(soft_err <= 1e-6, "softmax sums");
  o.detail << "softmax |sum-1| max " << fmt(soft_err) << "; ";

  // The same properties on the maps a default model captures.
  auto model = wv::build_model<float>(wv::ArchConfig{}, 5);
  const auto out = wv::forward(model, random_tensor<float>({64, 64, 1}, rng, 0, 1),
                               random_tensor<float>({64, 64, 1}, rng, 0, 1), true);
  double model_row = 0;
  for (const auto& beta : out.artifacts.ca_maps) {
    const auto t = beta.dim(0);
    for (std::size_t i = 0; i < t; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < t; ++j) s += beta[i * t + j];
      model_row = std::max(model_row, std::abs(s - 1));
    }
  }
  double model_zeta = 0;
  for (double v : out.artifacts.sa_maps[0].data()) model_zeta += v;
  o.require(model_row <= 1e-5, "default model beta rows");
  o.require(std::abs(model_zeta - 8) <= 1e-4, "default model zeta");
  o.detail << "default model: beta " << fmt(model_row) << ", zeta " << fmt(std::abs(model_zeta - 8));
  return o;
}

// -------------------------------------------------------------------- loss

Outcome loss(const fs::path&) {
  Outcome o;
  wv::Rng rng(5);
  double worst = 0;
  const wv::FocalConfig fl{0.5, 0.0};
  for (int i = 0; i < 1000; ++i) {
    const double p = rng.uniform(1e-9, 1.0);
    const int y = static_cast<int>(rng.below(2));
    Tensor<double> probs({2}, std::vector<double>{y ? 1 - p : p, y ? p : 1 - p});
    const double focal = wv::focal_loss(probs, y, fl).item();
    const double cce = wv::cce_loss(probs, y).item();
    worst = std::max(worst, std::abs(focal - 0.5 * cce));
  }
  o.require(worst <= 1e-12, "focal(gamma=0, alpha=0.5) vs 0.5 cce");
  o.detail << "max |FL - 0.5 CCE| " << fmt(worst) << " over 1000 inputs; ";

  std::size_t violations = 0, checked = 0;
  for (double gamma : {0.0, 0.5, 1.0, 2.0, 5.0})
    for (double alpha : {0.25, 0.5, 0.75})
      for (int y : {0, 1}) {
        double prev = INFINITY;
        for (int k = 1; k < 1000; ++k) {
          const double v = wv::focal_value(k / 1000.0, y, wv::FocalConfig{alpha, gamma});
          violations += !(v < prev);
          prev = v;
          ++checked;
        }
      }
  o.require(violations == 0, "focal loss not strictly decreasing in p_t");
  o.detail << "monotone on " << checked << " grid points";
  return o;
}

// ------------------------------------------------------------------- shape

Outcome shape(const fs::path& work) {
  Outcome o;
  wv::Rng rng(13);
  const std::size_t d = 32;
  for (std::size_t n : {2u, 4u, 8u}) {
    wv::ArchConfig arch;
    arch.n_heads = n;
    auto model = wv::build_model<double>(arch, 1);
    attn::MHCAParams<double> p;
    for (std::size_t i = 0; i < n; ++i) {
      const auto pre = "ca.h" + std::to_string(i);
      auto c = [&](const std::string& s) {
        return attn::Conv1x1<double>{model.param(pre + "." + s + ".w"), model.param(pre + "." + s + ".b")};
      };
      p.heads.push_back({c("L"), c("M"), c("N"), c("V")});
    }
    const auto out = attn::mhca(random_tensor({32, 32, d}, rng), random_tensor({32, 32, d}, rng), p, true);
    o.require(out.out.shape() == Shape{32, 32, 2 * d}, "MHCA n=" + std::to_string(n) + " gives " + wv::shape_str(out.out.shape()));
    o.require(out.betas.size() == n, "beta count");
    o.detail << "n=" << n << " -> " << wv::shape_str(out.out.shape()) << "; ";
  }

  auto model = wv::build_model<float>(wv::ArchConfig{}, 3);
  auto a = random_tensor<float>({64, 64, 1}, rng, 0, 1), b = random_tensor<float>({64, 64, 1}, rng, 0, 1);
  const auto fwd = wv::forward(model, a, b, true);
  o.require(fwd.artifacts.sa_maps.at(0).shape() == Shape{16, 16}, "captured SA map shape");
  o.require(wv::viz::sa_map(fwd.artifacts).shape() == Shape{64, 64}, "upsampled SA map shape");
  fresh_dir(work);
  const auto res = wv::viz::export_attention(model, a, b, a.cast<double>(), b.cast<double>(), {{0, 16, 16}},
                                             wv::viz::OverlaySpec{}, work / "export");
  const auto heat = wv::viz::read_heat_csv(work / "export" / "sa_imgA.csv");
  const auto img = wv::read_ppm(work / "export" / "sa_imgA.ppm");
  o.require(heat.size() == 64 && heat[0].size() == 64, "exported SA heat size");
  o.require(img.width == 64 && img.height == 64, "exported SA overlay size");
  o.detail << "SA captured " << wv::shape_str(fwd.artifacts.sa_maps[0].shape()) << ", exported " << heat.size() << "x"
           << (heat.empty() ? 0 : heat[0].size());
  return o;
}

// ---------------------------------------------------------------- protocol

Outcome protocol(const fs::path&) {
  Outcome o;
  wv::Rng rng(21);
  // Uneven writers so the per-writer C(s,2) count is exercised; 16 per fold keeps
  // enough inter-writer pairs for 1:10 in a writer-disjoint test fold.
  wv::Manifest m;
  std::map<fs::path, std::string> writer;
  for (std::size_t w = 0; w < 80; ++w) {
    const std::size_t s = 5 + rng.below(10);
    for (std::size_t k = 0; k < s; ++k) {
      const fs::path path = "w" + std::to_string(w) + "_" + std::to_string(k);
      m.samples.push_back({path, std::to_string(w), std::to_string(k), std::nullopt});
      writer[path] = std::to_string(w);
    }
  }
  std::size_t mismatches = 0, splits = 0, total_pos = 0;
  for (bool disjoint : {false, true})
    for (std::size_t fold = 0; fold < 5; ++fold) {
      wv::AndPairOptions opt;
      opt.fold_index = fold;
      opt.seed = 77;
      opt.writer_disjoint = disjoint;
      const auto split = wv::make_pairs_and(m, opt);
      std::set<fs::path> train_samples;
      for (const auto* part : {&split.train, &split.test}) {
        ++splits;
        std::map<std::string, std::set<fs::path>> samples_of;
        std::map<std::string, std::size_t> pos_of;
        std::size_t pos = 0, neg = 0;
        std::set<std::pair<fs::path, fs::path>> seen;
        for (const auto& p : *part) {
          samples_of[writer[p.path_a]].insert(p.path_a);
          samples_of[writer[p.path_b]].insert(p.path_b);
          const bool same = writer[p.path_a] == writer[p.path_b];
          mismatches += (p.label == 1) != same;
          mismatches += !seen.insert(std::minmax(p.path_a, p.path_b)).second;
          if (p.label) ++pos, ++pos_of[writer[p.path_a]];
          else ++neg;
          if (part == &split.train) train_samples.insert(p.path_a), train_samples.insert(p.path_b);
          else mismatches += train_samples.count(p.path_a) + train_samples.count(p.path_b);
        }
        // Every writer in the split contributes exactly C(s,2) positive pairs.
        for (const auto& [w, s] : samples_of) mismatches += pos_of[w] != s.size() * (s.size() - 1) / 2;
        mismatches += neg != 10 * pos;
        total_pos += pos;
      }
    }
  o.require(mismatches == 0, std::to_string(mismatches) + " AND protocol violations");
  o.detail << "AND: " << splits << " splits, " << total_pos << " intra pairs, C(s,2) per writer and 1:10 exact; ";

  wv::Manifest sig;
  sig.has_kind = true;
  for (std::size_t w = 0; w < 55; ++w)
    for (std::size_t k = 0; k < 48; ++k)
      sig.samples.push_back({"s" + std::to_string(w) + "_" + std::to_string(k), std::to_string(w), std::to_string(k),
                             k < 24 ? wv::SampleKind::genuine : wv::SampleKind::forgery});
  wv::SignaturePairOptions so;
  so.seed = 3;
  const auto split = wv::make_pairs_signature(sig, so);
  auto count = [](const std::vector<wv::PairRecord>& v, int label) {
    return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [&](const auto& p) { return p.label == label; }));
  };
  std::map<std::string, std::size_t> per_writer;
  for (const auto& p : split.train)
    if (p.label) ++per_writer[p.path_a.string().substr(1, p.path_a.string().find('_') - 1)];
  bool per_writer_ok = per_writer.size() == 50;
  for (const auto& [w, n] : per_writer) per_writer_ok &= n == 276;
  const std::size_t got[] = {count(split.train, 1), count(split.train, 0), count(split.test, 1), count(split.test, 0)};
  o.require(per_writer_ok, "276 genuine pairs per writer");
  o.require(got[0] == 13800 && got[1] == 28800 && got[2] == 1380 && got[3] == 2880, "signature totals");
  o.detail << "signature: 276/writer, " << got[0] << "/" << got[1] << "/" << got[2] << "/" << got[3];
  return o;
}

// ------------------------------------------------------------------ oracle

Outcome oracle_equivalence(const fs::path& work) {
  Outcome o;
  wv::Rng rng(31);
  std::size_t mismatches = 0;
  auto compare = [&](const wv::EvalReport& r, const oracle::Metrics& m) {
    mismatches += r.tp != std::uint64_t(m.tp) || r.fp != std::uint64_t(m.fp) || r.tn != std::uint64_t(m.tn) ||
                  r.fn != std::uint64_t(m.fn);
    mismatches += r.precision != m.precision || r.recall != m.recall || r.f1 != m.f1;
    mismatches += r.far_pct != m.far_pct || r.frr_pct != m.frr_pct || r.acc_pct != m.acc_pct;
  };
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> labels(1000), pred(1000);
    const double pos_rate = rng.uniform(0, 1), hit = rng.uniform(0, 1);
    for (std::size_t i = 0; i < 1000; ++i) {
      labels[i] = rng.uniform() < pos_rate;
      pred[i] = rng.uniform() < hit ? labels[i] : 1 - labels[i];
    }
    compare(wv::report_from_predictions(labels, pred), oracle::metrics(labels, pred));
  }

  // evaluate() on 1000 real pairs against independent forward passes.
  fresh_dir(work);
  wv::synth::SynthOptions so;
  so.writers = 10;
  so.samples_per_writer = 8;
  so.seed = 4;
  so.out_dir = work / "data";
  const auto manifest = wv::synth::synth_dataset(so);
  std::vector<wv::PairRecord> pairs;
  for (int i = 0; i < 1000; ++i) {
    const auto& a = manifest.samples[rng.below(manifest.samples.size())];
    const auto& b = manifest.samples[rng.below(manifest.samples.size())];
    pairs.push_back({a.path, b.path, a.writer_id == b.writer_id});
  }
  auto model = wv::build_model<double>(reduced_arch(), 8);
  wv::ImageStore<double> store;
  {
    // Shift the class-1 bias to the median logit gap so both classes get predicted.
    std::vector<double> gap;
    for (const auto& p : pairs) {
      const auto probs = wv::forward(model, store.get(p.path_a), store.get(p.path_b), false).probs;
      gap.push_back(std::log(probs[1]) - std::log(probs[0]));
    }
    std::nth_element(gap.begin(), gap.begin() + gap.size() / 2, gap.end());
    model.params().at("fc2.b").data()[1] -= gap[gap.size() / 2];
  }
  const auto ev = wv::evaluate(model, pairs, store, 2);
  std::vector<int> labels, naive;
  for (const auto& p : pairs) {
    const auto probs = wv::forward(model, store.get(p.path_a), store.get(p.path_b), false).probs;
    labels.push_back(p.label);
    naive.push_back(probs[1] > probs[0] ? 1 : 0);
  }
  mismatches += ev.predictions != naive;
  compare(ev.report, oracle::metrics(labels, naive));
  const auto m = oracle::metrics(labels, naive);
  o.require(mismatches == 0, std::to_string(mismatches) + " report mismatches");
  o.detail << "200x1000 random predictions plus evaluate() on 1000 pairs (tp " << m.tp << ", fp " << m.fp << ", tn "
           << m.tn << ", fn " << m.fn << ") exact; ";

  double ca_err = 0, sa_err = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6), d = 1 + rng.below(6);
    auto q = random_tensor({h, w, d}, rng), k = random_tensor({h, w, d}, rng);
    auto p = detail::head_params(d, 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3), rng);
    for (bool literal : {false, true}) {
      const auto got = attn::ca_head(q, k, p, true, static_cast<Tape<double>*>(nullptr), literal ? attn::IndexOrder::literal : attn::IndexOrder::query_major);
      const auto ref = oracle::ca_head(q, k, p.query.weight, p.query.bias, p.key.weight, p.key.bias, p.value.weight,
                                       p.value.bias, p.output.weight, p.output.bias, literal);
      ca_err = std::max({ca_err, max_abs_diff(got.out.data(), ref.out.data()), max_abs_diff(got.beta->data(), ref.beta.data())});
    }
    const std::size_t K = 1 + rng.below(4);
    auto f = random_tensor({h + 1, w + 1, d}, rng);
    attn::SAParams<double> sp{random_tensor({K, 3, 3, d}, rng), random_tensor({K}, rng), Tensor<double>::scalar(rng.uniform(-1, 1))};
    const auto got = attn::soft_attention(f, sp, true);
    const auto ref = oracle::soft_attention(f, sp.kernels, sp.bias, sp.omega[0]);
    sa_err = std::max({sa_err, max_abs_diff(got.out.data(), ref.out.data()), max_abs_diff(got.zeta->data(), ref.zeta.data())});
  }
  o.require(ca_err <= 1e-10, "CA vs oracle " + fmt(ca_err));
  o.require(sa_err <= 1e-10, "SA vs oracle " + fmt(sa_err));
  o.detail << "CA max err " << fmt(ca_err) << ", SA max err " << fmt(sa_err);
  return o;
}

// ------------------------------------------------------------------ overfit

// 16 same-writer and 16 different-writer pairs from a fresh synthetic set.
std::vector<wv::PairRecord> overfit_pairs(const fs::path& dir) {
  wv::synth::SynthOptions so;
  so.writers = 8;
  so.samples_per_writer = 4;
  so.seed = 17;
  so.out_dir = dir;
  const auto m = wv::synth::synth_dataset(so);
  std::vector<wv::PairRecord> pos, neg;
  for (std::size_t i = 0; i < m.samples.size(); ++i)
    for (std::size_t j = i + 1; j < m.samples.size(); ++j) {
      const bool same = m.samples[i].writer_id == m.samples[j].writer_id;
      (same ? pos : neg).push_back({m.samples[i].path, m.samples[j].path, same});
    }
  wv::Rng rng(18);
  wv::shuffle(pos.begin(), pos.end(), rng);
  wv::shuffle(neg.begin(), neg.end(), rng);
  std::vector<wv::PairRecord> out(pos.begin(), pos.begin() + 16);
  out.insert(out.end(), neg.begin(), neg.begin() + 16);
  return out;
}

Outcome overfit(const fs::path& work) {
  Outcome o;
  fresh_dir(work);
  const auto pairs = overfit_pairs(work / "data");
  wv::TrainConfig cfg;  // default optimizer, loss and batch size
  cfg.max_epochs = 200;
  cfg.patience = 200;
  cfg.seed = 1;
  auto model = wv::build_model<float>(wv::ArchConfig{}, cfg.seed);
  wv::ImageStore<float> store;
  const auto t0 = Clock::now();
  double best_acc = 0;
  std::size_t reached = 0;
  const auto log = wv::fit(model, pairs, pairs, cfg, work / "model.ckpt", store,
                           [&](const wv::EpochRecord& e, const wv::VerifierModel<float>&) {
                             best_acc = std::max(best_acc, e.val.acc_pct);
                             if (e.val.acc_pct >= 95.0 && !reached) reached = e.epoch;
                             std::fprintf(stderr, "overfit epoch %zu loss %.5f train acc %.2f (%.0f s)\n", e.epoch,
                                          e.train_loss, e.val.acc_pct, seconds_since(t0));
                             return reached == 0;
                           });
  const double secs = seconds_since(t0);
  o.require(reached > 0, "train accuracy stayed below 95% (best " + fmt(best_acc, 4) + "%)");
  o.require(secs < 600, "runtime " + fmt(secs) + " s");
  o.detail << "Siamese_MHCA_SA defaults on 32 pairs: ";
  if (reached) o.detail << "train accuracy " << fmt(log.epochs.back().val.acc_pct, 4) << "% at epoch " << reached;
  else o.detail << "best train accuracy " << fmt(best_acc, 4) << "% after " << log.epochs.size() << " epochs";
  o.detail << ", " << fmt(secs) << " s";
  return o;
}

// ----------------------------------------------------------- generalization

// Desk-scale widths: the default channel counts do not fit six training runs
// into the time budget on one core.
wv::ArchConfig generalization_arch(wv::Variant v) {
  wv::ArchConfig a;
  a.variant = v;
  a.stem_channels = 8;
  a.mid_channels = 16;
  a.head_channels = 16;
  a.n_heads = 4;
  a.sa_heads = 4;
  a.dense_units = 32;
  a.ca_placement = 16;
  return a;
}

wv::TrainConfig generalization_train(std::uint64_t seed) {
  wv::TrainConfig t;
  t.lr = 1e-3;
  t.batch_size = 32;
  t.max_epochs = 10;
  t.patience = 10;
  t.seed = seed;
  return t;
}

Outcome generalization(const fs::path& work) {
  Outcome o;
  fresh_dir(work);
  const auto t0 = Clock::now();
  wv::synth::SynthOptions so;
  so.writers = 50;
  so.samples_per_writer = 9;
  so.seed = 2024;
  so.out_dir = work / "data";
  const auto manifest = wv::synth::synth_dataset(so);
  wv::AndPairOptions po;
  po.seed = 2024;
  const auto split = wv::make_pairs_and(manifest, po);
  // Checkpoint selection uses an inner split of the training samples; the test fold is only scored.
  std::set<fs::path> train_samples;
  for (const auto& p : split.train) train_samples.insert(p.path_a), train_samples.insert(p.path_b);
  wv::Manifest inner_manifest;
  for (const auto& s : manifest.samples)
    if (train_samples.count(s.path)) inner_manifest.samples.push_back(s);
  wv::AndPairOptions vo;
  vo.folds = 4;
  vo.seed = 2025;
  const auto inner = wv::make_pairs_and(inner_manifest, vo);
  std::size_t test_pos = 0;
  for (const auto& p : split.test) test_pos += p.label;
  o.detail << "fold 0: " << inner.train.size() << " train / " << inner.test.size() << " val / " << split.test.size()
           << " test pairs (" << test_pos << " positive); ";

  std::map<wv::Variant, std::vector<wv::EvalReport>> reports;
  wv::ImageStore<float> store;
  for (auto variant : {wv::Variant::siamese_mhca_sa, wv::Variant::siamese_baseline})
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto t1 = Clock::now();
      auto model = wv::build_model<float>(generalization_arch(variant), seed);
      const auto ckpt = work / (std::string(wv::variant_name(variant)) + "_" + std::to_string(seed) + ".ckpt");
      wv::fit(model, inner.train, inner.test, generalization_train(seed), ckpt, store,
              [&](const wv::EpochRecord& e, const wv::VerifierModel<float>&) {
                std::fprintf(stderr, "%s seed %llu epoch %zu train %.4f val %.4f f1 %.3f acc %.2f (%.0f s)\n",
                             std::string(wv::variant_name(variant)).c_str(), static_cast<unsigned long long>(seed),
                             e.epoch, e.train_loss, e.val_loss, e.val.f1, e.val.acc_pct, seconds_since(t1));
                return true;
              });
      const auto best = wv::load_checkpoint(ckpt);
      reports[variant].push_back(wv::evaluate(best, split.test, store).report);
    }
  auto mean = [](const std::vector<wv::EvalReport>& v, auto field) {
    double s = 0;
    for (const auto& r : v) s += r.*field;
    return s / static_cast<double>(v.size());
  };
  const auto& mh = reports[wv::Variant::siamese_mhca_sa];
  const auto& base = reports[wv::Variant::siamese_baseline];
  const double mh_f1 = mean(mh, &wv::EvalReport::f1), mh_acc = mean(mh, &wv::EvalReport::acc_pct);
  const double base_f1 = mean(base, &wv::EvalReport::f1), base_acc = mean(base, &wv::EvalReport::acc_pct);
  o.require(mh_acc >= 85.0, "Siamese_MHCA_SA accuracy " + fmt(mh_acc, 4));
  o.require(mh_f1 >= 0.60, "Siamese_MHCA_SA F1 " + fmt(mh_f1));
  o.require(mh_f1 - base_f1 >= 0.02, "F1 margin " + fmt(mh_f1 - base_f1));
  const double secs = seconds_since(t0);
  o.require(secs < 3600, "runtime " + fmt(secs) + " s");
  o.detail << "mean of 3 seeds: Siamese_MHCA_SA acc " << fmt(mh_acc, 4) << "% F1 " << fmt(mh_f1) << ", Siamese_Baseline acc "
           << fmt(base_acc, 4) << "% F1 " << fmt(base_f1) << " (per seed F1:";
  for (std::size_t i = 0; i < 3; ++i) o.detail << " " << fmt(mh[i].f1) << "/" << fmt(base[i].f1);
  o.detail << "), " << fmt(secs) << " s";
  return o;
}

// ------------------------------------------------------------- determinism

int cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = wv::cli::run(args, out, err);
  if (code != 0) std::cerr << "command failed: " << err.str();
  return code;
}

std::map<std::string, std::string> tree_bytes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

Outcome determinism(const fs::path& work) {
  Outcome o;
  fresh_dir(work);
  std::ofstream(work / "cfg.txt") << "stem_channels = 4\nmid_channels = 8\nhead_channels = 8\nn_heads = 2\n"
                                  << "sa_heads = 2\ndense_units = 16\nbatch_size = 8\nlr = 0.001\nmax_epochs = 2\n"
                                  << "patience = 2\n";
  for (const std::string run : {"a", "b"}) {
    const auto d = (work / run).string();
    fs::create_directories(d);
    bool ok = cli({"synth", "--writers", "6", "--samples-per-writer", "5", "--out", d + "/data", "--seed", "9"}) == 0;
    ok = ok && cli({"make-pairs", "--manifest", d + "/data/manifest.csv", "--seed", "9", "--neg-ratio", "2",
                    "--out-train", d + "/train.csv", "--out-test", d + "/test.csv"}) == 0;
    ok = ok && cli({"train", "--pairs", d + "/train.csv", "--val-pairs", d + "/test.csv", "--config",
                    (work / "cfg.txt").string(), "--out-ckpt", d + "/model.ckpt", "--seed", "9"}) == 0;
    ok = ok && cli({"evaluate", "--ckpt", d + "/model.ckpt", "--pairs", d + "/test.csv", "--out", d + "/report.csv"}) == 0;
    ok = ok && cli({"export-attention", "--ckpt", d + "/model.ckpt", "--img-a", d + "/data/w000_s00.pgm", "--img-b",
                    d + "/data/w001_s01.pgm", "--out", d + "/export"}) == 0;
    o.require(ok, "pipeline run " + run);
  }
  if (!o.pass) return o;
  // Pair lists hold paths relative to their directory, so the two trees compare directly.
  const auto a = tree_bytes(work / "a"), b = tree_bytes(work / "b");
  std::size_t differing = 0;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) {
      ++differing;
      o.detail << "differs: " << name << "; ";
    }
  }
  o.require(differing == 0 && a.size() == b.size(), "byte reproducibility");
  o.detail << a.size() << " artifacts (synth, pairs, checkpoint, log, report, overlays) identical across runs; ";

  const auto loaded = wv::load_checkpoint(work / "a" / "model.ckpt");
  wv::save_checkpoint(loaded, work / "resaved.ckpt");
  auto again = wv::load_checkpoint(work / "resaved.ckpt");
  bool same_params = true;
  for (const auto& [name, t] : loaded.params())
    same_params &= std::memcmp(t.data().data(), again.param(name).data().data(), t.numel() * sizeof(float)) == 0;
  o.require(slurp(work / "a" / "model.ckpt") == slurp(work / "resaved.ckpt"), "checkpoint bytes after save/load");
  o.require(same_params, "parameters after save/load");
  o.detail << "checkpoint save/load/save bitwise identical";
  return o;
}

const std::map<std::string, Outcome (*)(const fs::path&)> kCriteria = {
    {"gradient", gradient},       {"normalization", normalization}, {"loss", loss},
    {"shape", shape},             {"protocol", protocol},           {"oracle", oracle_equivalence},
    {"overfit", overfit},         {"generalization", generalization}, {"determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string criterion = "all";
  fs::path workdir = fs::temp_directory_path() / "wverify_acceptance";
  app.add_option("--criterion", criterion, "criterion name or all");
  app.add_option("--workdir", workdir, "scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::vector<std::string> names;
  if (criterion == "all") {
    for (const auto* n : {"gradient", "normalization", "loss", "shape", "protocol", "oracle", "overfit",
                          "generalization", "determinism"})
      names.emplace_back(n);
  } else if (kCriteria.count(criterion)) {
    names.push_back(criterion);
  } else {
    std::cerr << "unknown criterion " << criterion << '\n';
    return 2;
  }
  bool all_pass = true;
  for (const auto& name : names) {
    Outcome o;
    try {
      o = kCriteria.at(name)(workdir / name);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
    all_pass &= o.pass;
  }
  return all_pass ? 0 : 1;
}
