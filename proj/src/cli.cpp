#include "wv/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "wv/attnviz.hpp"
#include "wv/config.hpp"
#include "wv/image.hpp"
#include "wv/image_store.hpp"
#include "wv/metrics.hpp"
#include "wv/pairs.hpp"
#include "wv/preprocess.hpp"
#include "wv/synth.hpp"
#include "wv/trainer.hpp"

namespace wv::cli {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_input(const fs::path& p, const char* flag) {
  if (!fs::is_regular_file(p)) throw InputError(std::string(flag) + ": no such file: " + p.string());
}

void require_output_file(const fs::path& p, const char* flag, bool force) {
  if (fs::exists(p) && !force)
    throw InputError(std::string(flag) + ": " + p.string() + " exists (use --force to overwrite)");
  if (fs::is_directory(p)) throw InputError(std::string(flag) + ": " + p.string() + " is a directory");
  const auto parent = p.has_parent_path() ? p.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw InputError(std::string(flag) + ": directory does not exist: " + parent.string());
}

void require_output_dir(const fs::path& p, const char* flag, bool force) {
  if (fs::exists(p)) {
    if (!fs::is_directory(p)) throw InputError(std::string(flag) + ": " + p.string() + " is not a directory");
    if (!fs::is_empty(p) && !force)
      throw InputError(std::string(flag) + ": " + p.string() + " is not empty (use --force to overwrite)");
  }
}

std::size_t default_threads() {
  const auto n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Undo the inversion so overlays show dark ink on white.
Tensor<double> display_image(const Tensor<double>& pre, const PreprocessSpec& spec) {
  Tensor<double> out({pre.dim(0), pre.dim(1), 1});
  for (std::size_t i = 0; i < pre.numel(); ++i) {
    const double v = pre[i] / (spec.normalize ? 1.0 : 255.0);
    out[i] = spec.invert ? 1.0 - v : v;
  }
  return out;
}

// Options that mirror config-file keys; values are applied only when given.
struct ConfigFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void add(CLI::App& app, const RunConfig& defaults) {
    std::map<std::string, std::string> shown;
    std::istringstream text(config_to_text(defaults));
    for (std::string line; std::getline(text, line);) {
      const auto eq = line.find(" = ");
      shown[line.substr(0, eq)] = line.substr(eq + 3);
    }
    for (const auto& key : config_keys()) {
      if (key == "seed" || key == "variant") continue;
      std::string flag = "--" + key;
      for (auto& c : flag)
        if (c == '_') c = '-';
      options[key] = app.add_option(flag, values[key], "config key " + key)->default_str(shown[key]);
    }
  }

  void apply(RunConfig& cfg) const {
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) apply_config_key(cfg, key, values.at(key));
  }
};

struct Context {
  std::ostream& out;
  std::ostream& err;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Writer verification with cross and soft attention", "wverify"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  Context ctx{out, err};
  std::function<void()> action;

  const RunConfig defaults;

  // synth
  auto* synth = app.add_subcommand("synth", "Render a synthetic handwriting dataset with a manifest");
  synth::SynthOptions so;
  std::optional<std::uint64_t> synth_seed;
  bool synth_force = false;
  synth->add_option("--writers", so.writers, "number of writers")->check(CLI::PositiveNumber);
  synth->add_option("--samples-per-writer", so.samples_per_writer, "samples per writer")->check(CLI::PositiveNumber);
  synth->add_option("--out", so.out_dir, "output directory")->required();
  synth->add_option("--seed", synth_seed, "random seed")->required();
  synth->add_flag("--force", synth_force, "overwrite a non-empty output directory");
  synth->callback([&] {
    action = [&] {
      require_output_dir(so.out_dir, "--out", synth_force);
      so.seed = *synth_seed;
      const auto m = synth::synth_dataset(so);
      ctx.out << "wrote " << m.samples.size() << " images and manifest.csv to " << so.out_dir.string() << '\n';
    };
  });

  // preprocess
  auto* prep = app.add_subcommand("preprocess", "Preprocess one PGM image to the network input");
  fs::path prep_in, prep_out;
  PreprocessSpec pspec;
  std::optional<int> prep_threshold;
  bool prep_no_invert = false, prep_force = false, prep_threshold_before = false;
  prep->add_option("--in", prep_in, "input PGM")->required();
  prep->add_option("--out", prep_out, "output PGM")->required();
  prep->add_option("--size", pspec.target_size, "output side length")->check(CLI::PositiveNumber);
  prep->add_option("--threshold", prep_threshold, "binarization threshold in [0, 255] (off by default)");
  prep->add_flag("--threshold-before-inversion", prep_threshold_before, "apply the threshold before inverting");
  prep->add_flag("--no-invert", prep_no_invert, "keep dark ink dark");
  prep->add_flag("--force", prep_force, "overwrite the output");
  prep->callback([&] {
    action = [&] {
      require_input(prep_in, "--in");
      require_output_file(prep_out, "--out", prep_force);
      pspec.invert = !prep_no_invert;
      pspec.threshold = prep_threshold;
      pspec.threshold_after_inversion = !prep_threshold_before;
      const auto t = preprocess<double>(read_pgm(prep_in), pspec);
      GrayImage img(t.dim(1), t.dim(0));
      for (std::size_t i = 0; i < t.numel(); ++i)
        img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0, 1.0) * 255.0));
      write_pgm(img, prep_out);
      ctx.out << "wrote " << prep_out.string() << '\n';
    };
  });

  // make-pairs
  auto* mp = app.add_subcommand("make-pairs", "Split a manifest into train/test pair lists");
  fs::path mp_manifest, mp_train, mp_test;
  std::string protocol = "and";
  std::size_t folds = 0, fold_index = 0, neg_ratio = 10;
  std::optional<std::uint64_t> mp_seed;
  bool mp_force = false, mp_writer_disjoint = false;
  mp->add_option("--manifest", mp_manifest, "manifest CSV")->required();
  mp->add_option("--protocol", protocol, "and | signature")->check(CLI::IsMember({"and", "signature"}));
  mp->add_option("--folds", folds, "number of folds (default 5 for and, 11 for signature)")->default_str("5 | 11");
  mp->add_option("--fold-index", fold_index, "held-out fold");
  mp->add_option("--neg-ratio", neg_ratio, "inter-writer pairs per intra-writer pair (and)")->check(CLI::PositiveNumber);
  mp->add_flag("--writer-disjoint", mp_writer_disjoint, "split by writer instead of by sample (and)");
  mp->add_option("--seed", mp_seed, "random seed")->required();
  mp->add_option("--out-train", mp_train, "train pairs CSV")->required();
  mp->add_option("--out-test", mp_test, "test pairs CSV")->required();
  mp->add_flag("--force", mp_force, "overwrite outputs");
  mp->callback([&] {
    action = [&] {
      require_input(mp_manifest, "--manifest");
      require_output_file(mp_train, "--out-train", mp_force);
      require_output_file(mp_test, "--out-test", mp_force);
      const auto manifest = read_manifest(mp_manifest);
      PairSplit split;
      if (protocol == "and") {
        AndPairOptions o;
        o.folds = folds ? folds : 5;
        o.fold_index = fold_index;
        o.neg_ratio = neg_ratio;
        o.seed = *mp_seed;
        o.writer_disjoint = mp_writer_disjoint;
        split = make_pairs_and(manifest, o);
      } else {
        SignaturePairOptions o;
        o.folds = folds ? folds : 11;
        o.fold_index = fold_index;
        o.seed = *mp_seed;
        split = make_pairs_signature(manifest, o);
      }
      write_pairs(split.train, mp_train);
      write_pairs(split.test, mp_test);
      auto count = [](const std::vector<PairRecord>& v) {
        std::size_t pos = 0;
        for (const auto& p : v) pos += p.label == 1;
        return std::pair{pos, v.size() - pos};
      };
      const auto [trp, trn] = count(split.train);
      const auto [tep, ten] = count(split.test);
      ctx.out << "train: " << trp << " positive, " << trn << " negative\n"
              << "test: " << tep << " positive, " << ten << " negative\n";
    };
  });

  // train
  auto* tr = app.add_subcommand("train", "Train a verifier and checkpoint the best validation model");
  std::string variant_str;
  fs::path tr_pairs, tr_val, tr_config, tr_ckpt, tr_log;
  std::optional<std::uint64_t> tr_seed;
  std::size_t tr_threads = default_threads();
  bool tr_force = false, tr_double = false;
  ConfigFlags tr_flags;
  tr->add_option("--variant", variant_str, "concat_baseline | concat_sa | siamese_baseline | siamese_ca_sa | siamese_mhca_sa")
      ->default_str(std::string(variant_name(defaults.arch.variant)));
  tr->add_option("--pairs", tr_pairs, "training pairs CSV")->required();
  tr->add_option("--val-pairs", tr_val, "validation pairs CSV")->required();
  tr->add_option("--config", tr_config, "key = value config file; flags override it");
  tr->add_option("--out-ckpt", tr_ckpt, "checkpoint path")->required();
  tr->add_option("--log", tr_log, "train log CSV")->default_str("<out-ckpt>.log.csv");
  tr->add_option("--seed", tr_seed, "random seed (required here or as config key seed)");
  tr->add_option("--threads", tr_threads, "worker threads for validation")->check(CLI::PositiveNumber);
  tr->add_flag("--double", tr_double, "train at 64-bit precision");
  tr->add_flag("--force", tr_force, "overwrite outputs");
  tr_flags.add(*tr, defaults);
  tr->callback([&] {
    action = [&] {
      require_input(tr_pairs, "--pairs");
      require_input(tr_val, "--val-pairs");
      if (!tr_config.empty()) require_input(tr_config, "--config");
      if (tr_log.empty()) tr_log = tr_ckpt.string() + ".log.csv";
      require_output_file(tr_ckpt, "--out-ckpt", tr_force);
      require_output_file(tr_log, "--log", tr_force);

      RunConfig cfg;
      std::vector<std::string> keys_seen;
      if (!tr_config.empty()) cfg = read_config(tr_config, {}, &keys_seen);
      const bool seed_in_config = std::find(keys_seen.begin(), keys_seen.end(), "seed") != keys_seen.end();
      if (!variant_str.empty()) apply_config_key(cfg, "variant", variant_str);
      tr_flags.apply(cfg);
      if (tr_seed) cfg.train.seed = *tr_seed;
      else if (!seed_in_config) throw UsageError("train: --seed is required (or set seed in the config file)");
      cfg.arch.validate();
      cfg.train.validate();

      const auto train = read_pairs(tr_pairs);
      const auto val = read_pairs(tr_val);
      auto report = [&](auto& model, auto& store) {
        auto cb = [&](const EpochRecord& e, const auto&) {
          ctx.out << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss
                  << " val_acc " << e.val.acc_pct << std::endl;
          return true;
        };
        const auto log = fit(model, train, val, cfg.train, tr_ckpt, store, cb, tr_threads);
        log.write_csv(tr_log);
        ctx.out << "best epoch " << log.best_epoch << " val_loss " << log.best_val_loss << '\n'
                << "wrote " << tr_ckpt.string() << " and " << tr_log.string() << '\n';
      };
      if (tr_double) {
        auto model = build_model<double>(cfg.arch, cfg.train.seed);
        ImageStore<double> store;
        report(model, store);
      } else {
        auto model = build_model<float>(cfg.arch, cfg.train.seed);
        ImageStore<float> store;
        report(model, store);
      }
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a pair list");
  fs::path ev_ckpt, ev_pairs, ev_out;
  std::size_t ev_threads = default_threads();
  bool ev_force = false;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint")->required();
  ev->add_option("--pairs", ev_pairs, "pairs CSV")->required();
  ev->add_option("--out", ev_out, "report CSV");
  ev->add_option("--threads", ev_threads, "worker threads")->check(CLI::PositiveNumber);
  ev->add_flag("--force", ev_force, "overwrite the report");
  ev->callback([&] {
    action = [&] {
      require_input(ev_ckpt, "--ckpt");
      require_input(ev_pairs, "--pairs");
      if (!ev_out.empty()) require_output_file(ev_out, "--out", ev_force);
      const auto model = load_checkpoint(ev_ckpt).cast<double>();
      ImageStore<double> store;
      const auto result = evaluate(model, read_pairs(ev_pairs), store, ev_threads);
      ctx.out << format_report(result.report);
      if (!ev_out.empty()) {
        write_report(result.report, ev_out);
        ctx.out << "wrote " << ev_out.string() << '\n';
      }
    };
  });

  // export-attention
  auto* ex = app.add_subcommand("export-attention", "Write attention overlays for one image pair");
  fs::path ex_ckpt, ex_a, ex_b, ex_out;
  std::vector<std::size_t> ex_heads;
  std::optional<std::size_t> ex_row, ex_col;
  viz::OverlaySpec ospec;
  bool ex_force = false;
  ex->add_option("--ckpt", ex_ckpt, "checkpoint")->required();
  ex->add_option("--img-a", ex_a, "first image (PGM)")->required();
  ex->add_option("--img-b", ex_b, "second image (PGM)")->required();
  ex->add_option("--out", ex_out, "job directory")->required();
  ex->add_option("--head", ex_heads, "cross-attention heads to export")->default_str("all");
  ex->add_option("--row", ex_row, "query row on the attention grid")->default_str("grid center");
  ex->add_option("--col", ex_col, "query column on the attention grid")->default_str("grid center");
  ex->add_option("--alpha", ospec.alpha, "overlay weight")->check(CLI::Range(0.0, 1.0));
  ex->add_flag("--force", ex_force, "overwrite a non-empty job directory");
  ex->callback([&] {
    action = [&] {
      require_input(ex_ckpt, "--ckpt");
      require_input(ex_a, "--img-a");
      require_input(ex_b, "--img-b");
      require_output_dir(ex_out, "--out", ex_force);
      const auto model = load_checkpoint(ex_ckpt).cast<double>();
      const PreprocessSpec spec;
      const auto a = preprocess<double>(read_pgm(ex_a), spec);
      const auto b = preprocess<double>(read_pgm(ex_b), spec);
      std::vector<viz::CaQuery> queries;
      const auto n = model.arch().ca_heads();
      if (n > 0) {
        const auto grid = model.arch().ca_placement;
        if (ex_heads.empty())
          for (std::size_t h = 0; h < n; ++h) ex_heads.push_back(h);
        for (auto h : ex_heads) queries.push_back({h, ex_row.value_or(grid / 2), ex_col.value_or(grid / 2)});
      } else if (!ex_heads.empty() || ex_row || ex_col) {
        throw ContractError("--head/--row/--col given but the checkpoint's variant has no cross attention");
      }
      const auto res = viz::export_attention(model, a, b, display_image(a, spec), display_image(b, spec),
                                             queries, ospec, ex_out);
      for (const auto& w : res.warnings) ctx.err << "warning: " << w << '\n';
      ctx.out << "same-writer likelihood " << res.same_writer_likelihood << '\n'
              << "wrote " << res.files.size() << " files to " << ex_out.string() << '\n';
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    ctx.out << (subs.empty() ? app.help() : subs.front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    ctx.out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    ctx.err << "error: " << e.what() << '\n';
    return 1;
  }
  try {
    action();
    return 0;
  } catch (const UsageError& e) {
    ctx.err << "error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    ctx.err << "error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    ctx.err << "error: " << e.what() << '\n';
    return 2;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace wv::cli
