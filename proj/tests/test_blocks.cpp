#include "doctest.h"
#include "gradcheck.hpp"

#include "bvton/blocks.hpp"

#include <cmath>

using namespace bvton;
using namespace bvton::testing;
using bvton::blocks::FlowConfig;

namespace {

constexpr double kTol = 1e-4;

void randomize(nn::ParamStore<double>& store, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  for (auto v : store.vars())
    for (Eigen::Index i = 0; i < v.value().size(); ++i) v.mutable_value()[i] = rng.uniform(-scale, scale);
}

void fill(nn::ParamStore<double>& store, double value) {
  for (auto v : store.vars()) v.mutable_value().array() = value;
}

}  // namespace

TEST_CASE("flow pyramid shapes walk 8, 16, 32, 64") {
  Rng rng(1);
  nn::ParamStore<double> store;
  FlowConfig cfg;
  cfg.in_channels = 4;
  blocks::FlowEstimator<double> est(store, "flow", cfg, rng);
  Rng data(2);
  const auto flows = est.forward(constant(random_tensor({2, 4, 64, 64}, data)));
  REQUIRE(flows.size() == 4);
  const int expected[4] = {8, 16, 32, 64};
  for (int l = 0; l < 4; ++l) {
    CHECK(flows[l].shape() == Shape{2, 2, expected[l], expected[l]});
  }
  // residual heads start at zero, so every level is exactly zero
  for (const auto& f : flows) CHECK(f.value().array().abs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(est.forward(constant(TensorD({1, 4, 60, 64}))), ContractError);
  CHECK_THROWS_AS(est.forward(constant(TensorD({1, 3, 64, 64}))), ContractError);
}

TEST_CASE("flow estimator is deterministic for a fixed seed") {
  FlowConfig cfg;
  cfg.in_channels = 2;
  cfg.levels = 3;
  cfg.widths = {4, 8, 8};
  cfg.style_dim = 8;
  auto run = [&] {
    Rng rng(11);
    nn::ParamStore<double> store;
    blocks::FlowEstimator<double> est(store, "f", cfg, rng);
    randomize(store, 12);
    Rng data(13);
    return est.forward(constant(random_tensor({1, 2, 16, 16}, data))).back().value();
  };
  const TensorD a = run(), b = run();
  CHECK(a.array().abs().maxCoeff() > 0);
  CHECK((a.array() == b.array()).all());
}

TEST_CASE("flow estimator gradient") {
  FlowConfig cfg;
  cfg.in_channels = 1;
  cfg.levels = 2;
  cfg.widths = {2, 2};
  cfg.style_dim = 2;
  Rng rng(3);
  nn::ParamStore<double> store;
  blocks::FlowEstimator<double> est(store, "f", cfg, rng);
  randomize(store, 4, 0.5);
  Rng data(5);
  auto x = param({1, 1, 4, 4}, data);
  std::vector<VarD> inputs = store.vars();
  inputs.push_back(x);
  auto f = [&](const std::vector<VarD>& v) { return project(est.forward(v.back()).back()); };
  CHECK(gradcheck(f, inputs) < kTol);
}

TEST_CASE("gating masks") {
  Rng rng(1);
  nn::ParamStore<double> store;
  auto cc = nn::make_conv(store, "c", 3, 2, 3, 1, rng);
  auto cp = nn::make_conv(store, "p", 3, 2, 3, 1, rng);
  Rng data(2);
  const auto x = constant(random_tensor({1, 3, 5, 5}, data, -3, 3));

  auto [mc, mp] = blocks::gating_masks(x, cc, cp);
  CHECK(mc.value().array().minCoeff() > 0.0);
  CHECK(mc.value().array().maxCoeff() < 1.0);
  CHECK(mp.value().array().minCoeff() > 0.0);

  fill(store, 0.0);
  auto [zc, zp] = blocks::gating_masks(x, cc, cp);
  CHECK((zc.value().array() == 0.5).all());
  CHECK((zp.value().array() == 0.5).all());

  cc.bias.mutable_value().array() = 20.0;
  auto [sc, _] = blocks::gating_masks(x, cc, cp);
  CHECK((1.0 - sc.value().array()).maxCoeff() < 1e-8);
}

TEST_CASE("correlation matrix against a double-loop cosine oracle") {
  Rng rng(7);
  const TensorD a = random_tensor({1, 1, 4, 3}, rng);
  const TensorD b = random_tensor({1, 1, 4, 3}, rng);
  const auto m = blocks::correlation_matrix(constant(a), constant(b)).value();
  REQUIRE(m.shape() == Shape{1, 1, 4, 4});
  auto centred = [](const TensorD& t, int r) {
    double mu = 0;
    for (int k = 0; k < 3; ++k) mu += t(0, 0, r, k) / 3.0;
    std::array<double, 3> v{};
    for (int k = 0; k < 3; ++k) v[k] = t(0, 0, r, k) - mu;
    return v;
  };
  for (int u = 0; u < 4; ++u)
    for (int v = 0; v < 4; ++v) {
      const auto x = centred(a, u), y = centred(b, v);
      double dot = 0, nx = 0, ny = 0;
      for (int k = 0; k < 3; ++k) {
        dot += x[k] * y[k];
        nx += x[k] * x[k];
        ny += y[k] * y[k];
      }
      CHECK(m(0, 0, u, v) == doctest::Approx(dot / (std::sqrt(nx) * std::sqrt(ny))).epsilon(1e-6));
    }

  const auto self = blocks::correlation_matrix(constant(a), constant(a)).value();
  for (int u = 0; u < 4; ++u) CHECK(std::abs(self(0, 0, u, u) - 1.0) < 1e-6);

  // centred (1,-1,0) vs (1,1,-2) are orthogonal
  TensorD p({1, 1, 1, 3}), q({1, 1, 1, 3});
  p[0] = 1, p[1] = -1, p[2] = 0;
  q[0] = 1, q[1] = 1, q[2] = -2;
  CHECK(std::abs(blocks::correlation_matrix(constant(p), constant(q)).value()[0]) < 1e-12);
}

TEST_CASE("correlation entries stay in [-1, 1]") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto m = blocks::correlation_matrix(constant(random_tensor({2, 1, 9, 5}, rng, -5, 5)),
                                              constant(random_tensor({2, 1, 9, 5}, rng, -5, 5)))
                       .value();
    CHECK(m.array().abs().maxCoeff() <= 1.0 + 1e-6);
  }
  // zero vectors do not produce NaN
  const auto z = blocks::correlation_matrix(constant(TensorD({1, 1, 2, 3})), constant(TensorD({1, 1, 2, 3}))).value();
  CHECK(z.array().isFinite().all());
}

TEST_CASE("attention transform") {
  Rng rng(9);
  const TensorD m = random_tensor({1, 1, 5, 5}, rng);
  const TensorD x = random_tensor({1, 1, 5, 3}, rng);

  const auto uniform = blocks::attention_transform(constant(m), constant(x), 1e-6).value();
  for (int u = 0; u < 5; ++u)
    for (int k = 0; k < 3; ++k) {
      double avg = 0;
      for (int v = 0; v < 5; ++v) avg += x(0, 0, v, k) / 5.0;
      CHECK(uniform(0, 0, u, k) == doctest::Approx(avg).epsilon(1e-5));
    }

  // row 2 peaks at column 3 with margin 1: weight on the rest is ~4 e^-100
  TensorD peaked({1, 1, 5, 5}, -0.5);
  peaked(0, 0, 2, 3) = 0.5;
  const auto sat = blocks::attention_transform(constant(peaked), constant(x), 100.0).value();
  for (int k = 0; k < 3; ++k) CHECK(std::abs(sat(0, 0, 2, k) - x(0, 0, 3, k)) < 1e-8);

  const auto w = softmax_rows(constant(m), 100.0).value();
  for (int u = 0; u < 5; ++u) {
    double total = 0;
    for (int v = 0; v < 5; ++v) {
      CHECK(w(0, 0, u, v) >= 0.0);
      total += w(0, 0, u, v);
    }
    CHECK(std::abs(total - 1.0) < 1e-5);
  }
  CHECK_THROWS_AS(blocks::attention_transform(constant(m), constant(x), 0.0), ContractError);
}

TEST_CASE("tri-level block with zero weights") {
  Rng rng(1);
  nn::ParamStore<double> store;
  blocks::TriLevelBlock<double> block(store, "t", 3, rng);
  Rng data(2);
  const auto fc = constant(random_tensor({1, 3, 4, 4}, data));
  const auto fp = constant(random_tensor({1, 3, 4, 4}, data));
  const auto fs = constant(random_tensor({1, 3, 4, 4}, data));

  fill(store, 0.0);
  store.get("t.beta.bias").mutable_value().array() = 0.3;
  auto out = block.forward(fc, fp, fs);
  CHECK(out.clothes.shape() == fc.shape());
  CHECK((out.clothes.value().array() == fc.value().array()).all());
  CHECK((out.pose.value().array() == fp.value().array()).all());
  CHECK((out.parsing.value().array() == 0.3).all());
  CHECK(out.correlation.shape() == Shape{1, 1, 16, 16});

  // identity modulation when the gamma bias keeps its initial value of one
  store.get("t.gamma.bias").mutable_value().array() = 1.0;
  out = block.forward(fc, fp, fs);
  CHECK((out.parsing.value().array() - (fs.value().array() + 0.3)).abs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(block.forward(fc, constant(TensorD({1, 3, 2, 2})), fs), ContractError);
}

TEST_CASE("tri-level block gradient") {
  Rng rng(3);
  nn::ParamStore<double> store;
  blocks::TriLevelBlock<double> block(store, "t", 2, rng, 2.0);
  randomize(store, 4, 0.5);
  Rng data(5);
  std::vector<VarD> inputs = store.vars();
  for (int i = 0; i < 3; ++i) inputs.push_back(param({1, 2, 3, 3}, data));
  auto f = [&](const std::vector<VarD>& v) {
    const std::size_t n = v.size();
    const auto o = block.forward(v[n - 3], v[n - 2], v[n - 1]);
    return VarD(add(add(project(o.clothes, 1), project(o.pose, 2)), project(o.parsing, 3)));
  };
  CHECK(gradcheck(f, inputs) < kTol);
}

TEST_CASE("mask norm inside a spade block") {
  Rng rng(1);
  nn::ParamStore<double> store;
  blocks::SpadeMaskNorm<double> norm(store, "n", 2, 3, 4, rng);
  Rng data(2);
  const auto h = constant(random_tensor({1, 2, 4, 4}, data, -2, 3));
  blocks::SpadeCondition<double> cond{random_tensor({1, 3, 4, 4}, data), TensorD({1, 1, 4, 4}, 1.0)};

  // gamma = 1 and beta = 0 expose the bare standardization
  fill(store, 0.0);
  store.get("n.gamma.bias").mutable_value().array() = 1.0;
  const auto out = norm.forward(h, cond).value();
  for (int c = 0; c < 2; ++c) {
    double mu = 0, m2 = 0;
    for (int i = 0; i < 16; ++i) mu += out(0, c, i / 4, i % 4) / 16;
    for (int i = 0; i < 16; ++i) m2 += std::pow(out(0, c, i / 4, i % 4) - mu, 2) / 16;
    CHECK(std::abs(mu) < 1e-4);
    CHECK(std::abs(std::sqrt(m2) - 1) < 1e-3);
  }
}

TEST_CASE("two-group standardization oracle on a 4x4 map") {
  // left half (mask 1) holds 0..7, right half holds 10 * (0..7)
  TensorD x({1, 1, 4, 4}), mask({1, 1, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int c = 0; c < 4; ++c) {
      const int k = y * 2 + (c % 2);
      const bool inside = c < 2;
      mask(0, 0, y, c) = inside ? 1 : 0;
      x(0, 0, y, c) = inside ? k : 10.0 * k;
    }
  // values 0..7: mean 3.5, population variance 5.25
  const double sd_in = std::sqrt(5.25 + 1e-5), sd_out = std::sqrt(525.0 + 1e-5);
  const auto out = masknorm(constant(x), mask).value();
  for (int y = 0; y < 4; ++y)
    for (int c = 0; c < 4; ++c) {
      const int k = y * 2 + (c % 2);
      const double want = c < 2 ? (k - 3.5) / sd_in : (10.0 * k - 35.0) / sd_out;
      CHECK(std::abs(out(0, 0, y, c) - want) < 1e-6);
    }
  // constant input stays finite
  CHECK(masknorm(constant(TensorD({1, 2, 4, 4}, 3.0)), mask).value().array().isFinite().all());
}

TEST_CASE("spade residual block shape and gradient") {
  Rng rng(6);
  nn::ParamStore<double> store;
  blocks::SpadeResBlock<double> block(store, "r", 3, 2, 2, rng);
  randomize(store, 7, 0.5);
  Rng data(8);
  TensorD mask({1, 1, 4, 4});
  for (int i = 0; i < 8; ++i) mask[i] = 1;
  blocks::SpadeCondition<double> cond{random_tensor({1, 2, 4, 4}, data), mask};
  auto x = param({1, 3, 4, 4}, data);
  CHECK(block.forward(x, cond).shape() == Shape{1, 2, 4, 4});
  std::vector<VarD> inputs = store.vars();
  inputs.push_back(x);
  auto f = [&](const std::vector<VarD>& v) { return project(block.forward(v.back(), cond)); };
  CHECK(gradcheck(f, inputs) < kTol);
}

TEST_CASE("resized spade condition keeps a binary mask") {
  TensorD layout({1, 2, 8, 8}, 0.5), mask({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 3; ++x) mask(0, 0, y, x) = 1;
  const auto c = blocks::resize_condition(layout, mask, 4, 4);
  CHECK(c.layout.shape() == Shape{1, 2, 4, 4});
  for (Eigen::Index i = 0; i < c.mask.size(); ++i) CHECK((c.mask[i] == 0.0 || c.mask[i] == 1.0));
}

TEST_CASE("gumbel softmax") {
  Rng data(1);
  const auto logits = constant(random_tensor({1, 4, 3, 3}, data, -2, 2));
  Rng a(5), b(5);
  const auto s1 = blocks::gumbel_softmax(logits, 1.0, a).value();
  const auto s2 = blocks::gumbel_softmax(logits, 1.0, b).value();
  CHECK((s1.array() == s2.array()).all());
  for (int p = 0; p < 9; ++p) {
    double total = 0;
    for (int c = 0; c < 4; ++c) total += s1(0, c, p / 3, p % 3);
    CHECK(std::abs(total - 1) < 1e-5);
  }

  // margin >= 1 after noise at tau = 0.01: the winner takes > 0.99
  TensorD wide({1, 3, 1, 1});
  wide[0] = 40, wide[1] = 0, wide[2] = -5;
  Rng rng(2);
  for (int t = 0; t < 50; ++t) CHECK(blocks::gumbel_softmax(constant(wide), 0.01, rng).value()[0] > 0.99);

  CHECK_THROWS_AS(blocks::gumbel_softmax(logits, 0.0, rng), ContractError);
  CHECK_THROWS_AS(blocks::gumbel_softmax(logits, -1.0, rng), ContractError);

  const auto hard = blocks::gumbel_softmax(logits, 1.0, rng, true).value();
  for (Eigen::Index i = 0; i < hard.size(); ++i) CHECK((hard[i] == 0.0 || hard[i] == 1.0));
}

TEST_CASE("hard gumbel samples follow softmax(logits)") {
  TensorD l({1, 3, 1, 1});
  l[0] = 0.5, l[1] = -0.3, l[2] = 1.2;
  const auto p = softmax_channels(constant(l)).value();
  Rng rng(42);
  std::array<double, 3> freq{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto s = blocks::gumbel_softmax(constant(l), 1.0, rng, true).value();
    for (int c = 0; c < 3; ++c) freq[c] += s[c] / n;
  }
  for (int c = 0; c < 3; ++c) CHECK(std::abs(freq[c] - p[c]) < 0.02);
}

TEST_CASE("patch discriminator shapes") {
  Rng rng(1);
  nn::ParamStore<double> store;
  blocks::PatchDiscriminator<double> d(store, "d", 5, rng, 2, 4);
  Rng data(2);
  const auto img = constant(random_tensor({2, 3, 16, 16}, data));
  const auto cond = constant(random_tensor({2, 2, 16, 16}, data));
  const auto out = d.forward(img, cond);
  REQUIRE(out.scores.size() == 2);
  CHECK(out.scores[0].shape() == Shape{2, 1, 4, 4});
  CHECK(out.scores[1].shape() == Shape{2, 1, 2, 2});
  REQUIRE(out.features.size() == 2);
  for (const auto& f : out.features) CHECK(f.size() == 2);
  CHECK(out.features[0][1].shape().c == 8);
  const auto again = d.forward(img, cond);
  CHECK((again.scores[1].value().array() == out.scores[1].value().array()).all());
}

TEST_CASE("feature extractor is frozen and deterministic") {
  blocks::FeatureExtractor<double> fx;
  Rng data(3);
  const TensorD img = random_tensor({1, 3, 16, 16}, data, 0, 1);
  const auto a = fx.forward(constant(img));
  const auto b = blocks::FeatureExtractor<double>().forward(constant(img));
  REQUIRE(a.size() == 3);
  CHECK(a[0].shape() == Shape{1, 16, 8, 8});
  CHECK(a[2].shape() == Shape{1, 64, 2, 2});
  for (int i = 0; i < 3; ++i) CHECK((a[i].value().array() == b[i].value().array()).all());
  for (const auto& [_, v] : fx.params().items()) CHECK_FALSE(v.requires_grad());
  CHECK_THROWS_AS(fx.forward(constant(TensorD({1, 1, 8, 8}))), ContractError);
}
