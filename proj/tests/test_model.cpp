#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "suites.hpp"
#include "support.hpp"
#include "wv/model.hpp"

using namespace wvtest;

namespace {

const wv::Variant kVariants[] = {wv::Variant::concat_baseline, wv::Variant::concat_sa, wv::Variant::siamese_baseline,
                                 wv::Variant::siamese_ca_sa, wv::Variant::siamese_mhca_sa};

wv::ArchConfig small(wv::Variant v) {
  auto a = reduced_arch();
  a.variant = v;
  return a;
}

// Biases that a softmax shifts away: the SA kernel bias and the key-side bias
// of every cross-attention head.
bool structurally_zero(const std::string& name) {
  return name == "sa.bias" || (name.starts_with("ca.h") && name.ends_with(".M.b"));
}

}  // namespace

TEST_CASE("every variant produces a probability pair") {
  wv::Rng rng(31);
  auto a = random_tensor({64, 64, 1}, rng, 0, 1), b = random_tensor({64, 64, 1}, rng, 0, 1);
  for (auto v : kVariants) {
    for (std::size_t placement : {32u, 16u}) {
      auto arch = small(v);
      arch.ca_placement = placement;
      auto m = wv::build_model<double>(arch, 1);
      auto out = wv::forward(m, a, b, true);
      INFO(wv::variant_name(v) << " placement " << placement);
      REQUIRE(out.probs.shape() == Shape{2});
      CHECK(out.probs[0] + out.probs[1] == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(out.artifacts.has_ca() == (arch.ca_heads() > 0));
      CHECK(out.artifacts.has_sa() == arch.uses_sa());
      if (out.artifacts.has_ca()) {
        CHECK(out.artifacts.ca_height == placement);
        CHECK(out.artifacts.ca_maps.size() == arch.ca_heads());
        CHECK(out.artifacts.ca_maps[0].shape() == Shape{placement * placement, placement * placement});
      }
      if (out.artifacts.has_sa()) CHECK(out.artifacts.sa_maps[0].shape() == Shape{16, 16});
    }
  }
}

TEST_CASE("variant names round-trip") {
  for (auto v : kVariants) CHECK(wv::parse_variant(wv::variant_name(v)) == v);
  CHECK_THROWS_AS(wv::parse_variant("siamese"), wv::ConfigError);
  CHECK(small(wv::Variant::siamese_ca_sa).ca_heads() == 2);
  CHECK(small(wv::Variant::siamese_baseline).ca_heads() == 0);
}

TEST_CASE("invalid architectures are rejected") {
  auto a = reduced_arch();
  a.n_heads = 3;
  CHECK_THROWS_AS(a.validate(), wv::ConfigError);
  a = reduced_arch();
  a.ca_placement = 8;
  CHECK_THROWS_AS(wv::build_model<float>(a, 0), wv::ConfigError);
  a = reduced_arch();
  a.dropout_rate = 1.0;
  CHECK_THROWS_AS(a.validate(), wv::ConfigError);
  a = reduced_arch();
  a.sa_heads = 0;
  CHECK_THROWS_AS(a.validate(), wv::ConfigError);
}

TEST_CASE("architecture JSON round-trips") {
  auto a = reduced_arch();
  a.attention_norm = true;
  a.ca_index_order = wv::attn::IndexOrder::literal;
  a.dropout_rate = 0.25;
  CHECK(wv::ArchConfig::from_json(a.to_json()) == a);
  CHECK_THROWS_AS(wv::ArchConfig::from_json("{\"variant\": 3}"), wv::FormatError);
}

TEST_CASE("build is deterministic per seed and agrees across precisions") {
  auto a = wv::build_model<double>(reduced_arch(), 9), b = wv::build_model<double>(reduced_arch(), 9);
  auto c = wv::build_model<double>(reduced_arch(), 10);
  auto f = wv::build_model<float>(reduced_arch(), 9);
  bool differs = false;
  for (const auto& [name, t] : a.params()) {
    CHECK(max_abs_diff(t.data(), b.param(name).data()) == 0.0);
    differs |= max_abs_diff(t.data(), c.param(name).data()) > 0;
    const auto& tf = f.param(name);
    for (std::size_t i = 0; i < t.numel(); ++i) CHECK(tf[i] == static_cast<float>(t[i]));
  }
  CHECK(differs);
  CHECK(a.param("sa.omega")[0] == 0.0);
}

TEST_CASE("input contracts are enforced") {
  auto m = wv::build_model<double>(reduced_arch(), 1);
  Tensor<double> img({64, 64, 1});
  CHECK_THROWS_AS(wv::forward(m, Tensor<double>({32, 32, 1}), img, false), wv::DimensionError);
  m.set_train_mode(true);
  CHECK_THROWS_AS(wv::forward(m, img, img, false), wv::ContractError);
  CHECK_THROWS_AS(m.param("nope"), wv::ContractError);
  auto c = wv::build_model<double>(small(wv::Variant::concat_baseline), 1);
  CHECK_THROWS_AS(wv::stem_features(c, img), wv::ContractError);
}

TEST_CASE("siamese stems share weights") {
  wv::Rng rng(32);
  auto m = wv::build_model<double>(small(wv::Variant::siamese_baseline), 2);
  auto a = random_tensor({64, 64, 1}, rng, 0, 1), b = random_tensor({64, 64, 1}, rng, 0, 1);
  auto fa = wv::stem_features(m, a);
  CHECK(max_abs_diff(fa.data(), wv::stem_features(m, a).data()) == 0.0);
  CHECK(fa.shape() == Shape{32, 32, 4});
  // Swapping the images swaps the stem features but not the weights, so the
  // baseline (plain concatenation) gives a different but valid output.
  auto p1 = wv::forward(m, a, b, false).probs, p2 = wv::forward(m, b, a, false).probs;
  CHECK(p1[0] + p1[1] == doctest::Approx(1.0));
  CHECK(p2[0] + p2[1] == doctest::Approx(1.0));
}

TEST_CASE("every parameter receives gradient except shift-invariant biases") {
  wv::Rng rng(33);
  for (auto v : kVariants) {
    auto m = wv::build_model<double>(small(v), 3);
    if (m.has_param("sa.omega")) m.params().at("sa.omega").data()[0] = 0.3;
    m.set_train_mode(true);
    wv::Rng drop(1);
    auto a = random_tensor({64, 64, 1}, rng, 0, 1), b = random_tensor({64, 64, 1}, rng, 0, 1);
    for (auto& [name, t] : m.params())
      for (auto& x : t.data())
        if (name.ends_with(".b") || name.ends_with(".beta") || name == "sa.bias") x = rng.uniform(-0.1, 0.1);
    wv::Tape<double> tape;
    auto out = wv::forward(m, a, b, false, &tape, &drop);
    tape.backward(wv::loss(out.probs, 1, wv::LossConfig{}, &tape));
    for (const auto& [name, t] : m.params()) {
      double norm = 0;
      for (double g : t.grad()) norm += g * g;
      INFO(wv::variant_name(v) << " " << name);
      if (structurally_zero(name))
        CHECK(std::sqrt(norm) < 1e-12);
      else
        CHECK(norm > 0);
    }
  }
}

TEST_CASE("end-to-end gradient of a reduced model") {
  wv::Rng rng(34);
  auto m = wv::build_model<double>(reduced_arch(), 5);
  m.params().at("sa.omega").data()[0] = 0.4;
  std::vector<std::pair<Tensor<double>, Tensor<double>>> batch;
  for (int i = 0; i < 2; ++i) batch.emplace_back(random_tensor({64, 64, 1}, rng, 0, 1), random_tensor({64, 64, 1}, rng, 0, 1));
  const auto r = check_model_gradients(m, batch, {1, 0}, 3, kModelFdStep);
  INFO("worst " << r.worst_param << " " << r.max_rel_error);
  CHECK(r.params_checked == m.params().size());
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("checkpoint round-trips bitwise at 32 bits") {
  TempDir dir("ckpt");
  auto m = wv::build_model<float>(reduced_arch(), 7);
  m.params().at("sa.omega").data()[0] = 0.123456789f;
  wv::save_checkpoint(m, dir / "m.ckpt");
  auto back = wv::load_checkpoint(dir / "m.ckpt");
  CHECK(back.arch() == m.arch());
  REQUIRE(back.params().size() == m.params().size());
  for (const auto& [name, t] : m.params()) {
    const auto& u = back.param(name);
    REQUIRE(u.shape() == t.shape());
    CHECK(std::memcmp(u.data().data(), t.data().data(), t.numel() * sizeof(float)) == 0);
  }
  wv::save_checkpoint(back, dir / "m2.ckpt");
  std::ifstream f1(dir / "m.ckpt", std::ios::binary), f2(dir / "m2.ckpt", std::ios::binary);
  CHECK(std::string(std::istreambuf_iterator<char>(f1), {}) == std::string(std::istreambuf_iterator<char>(f2), {}));
}

TEST_CASE("corrupt checkpoints raise FormatError") {
  TempDir dir("ckpt_bad");
  auto m = wv::build_model<float>(reduced_arch(), 7);
  wv::save_checkpoint(m, dir / "m.ckpt");
  std::ifstream in(dir / "m.ckpt", std::ios::binary);
  std::string bytes(std::istreambuf_iterator<char>(in), {});
  auto write = [&](const std::string& s) {
    std::ofstream(dir / "bad.ckpt", std::ios::binary) << s;
    return dir / "bad.ckpt";
  };
  CHECK_THROWS_AS(wv::load_checkpoint(write(bytes.substr(0, bytes.size() - 3))), wv::FormatError);
  CHECK_THROWS_AS(wv::load_checkpoint(write("XXXXXXXX" + bytes.substr(8))), wv::FormatError);
  CHECK_THROWS_AS(wv::load_checkpoint(write(bytes + "z")), wv::FormatError);
  CHECK_THROWS_AS(wv::load_checkpoint(dir / "missing.ckpt"), wv::IoError);
}
