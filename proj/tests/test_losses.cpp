#include "doctest.h"
#include "gradcheck.hpp"

#include "bvton/losses.hpp"

#include <cmath>

using namespace bvton;
using namespace bvton::testing;
namespace L = bvton::losses;

namespace {
constexpr double kTol = 1e-4;
double scalar(const VarD& v) { return v.value()[0]; }
}  // namespace

TEST_CASE("flow l1 loss") {
  Rng rng(1);
  const TensorD src = random_tensor({1, 3, 4, 4}, rng);
  const TensorD zero_flow({1, 2, 4, 4});
  CHECK(scalar(L::flow_l1_loss(constant(src), constant(src), constant(zero_flow))) == 0.0);
  CHECK(scalar(L::flow_l1_loss(constant(TensorD({1, 3, 4, 4})), constant(src), constant(zero_flow))) ==
        doctest::Approx(src.array().abs().mean()).epsilon(1e-12));

  // flow x = +1 samples the right neighbour, zeros past the border
  const TensorD tgt = random_tensor({1, 3, 4, 4}, rng);
  TensorD shift({1, 2, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) shift(0, 0, y, x) = 1.0;
  double oracle = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) oracle += std::abs(tgt(0, c, y, x) - (x < 3 ? src(0, c, y, x + 1) : 0.0)) / 48;
  CHECK(std::abs(scalar(L::flow_l1_loss(constant(tgt), constant(src), constant(shift))) - oracle) < 1e-6);
  CHECK_THROWS_AS(L::flow_l1_loss(constant(tgt), constant(TensorD({1, 1, 4, 4})), constant(shift)), ContractError);

  auto flow = param({1, 2, 4, 4}, rng, 0.2, 0.8);
  auto f = [&](const std::vector<VarD>& v) { return L::flow_l1_loss(v[0], v[1], v[2]); };
  CHECK(gradcheck(f, {param({1, 3, 4, 4}, rng, 2, 3), param({1, 3, 4, 4}, rng), flow}) < kTol);
}

TEST_CASE("layout cross entropy") {
  TensorD onehot({1, 8, 4, 4});
  for (int i = 0; i < 16; ++i) onehot(0, i % 8, i / 4, i % 4) = 1;

  TensorD strong({1, 8, 4, 4});
  for (int i = 0; i < 16; ++i) strong(0, i % 8, i / 4, i % 4) = 20;
  CHECK(scalar(L::cross_entropy_layout(constant(strong), onehot)) < 1e-6);
  CHECK(std::abs(scalar(L::cross_entropy_layout(constant(TensorD({1, 8, 4, 4}, 0.7)), onehot)) - std::log(8.0)) <
        1e-6);

  Rng rng(2);
  const TensorD logits = random_tensor({1, 3, 2, 2}, rng, -2, 2);
  const int truth[4] = {0, 2, 1, 2};
  TensorD oh({1, 3, 2, 2});
  double want = 0;
  for (int p = 0; p < 4; ++p) {
    oh(0, truth[p], p / 2, p % 2) = 1;
    double z = 0;
    for (int c = 0; c < 3; ++c) z += std::exp(logits(0, c, p / 2, p % 2));
    want += -(logits(0, truth[p], p / 2, p % 2) - std::log(z)) / 4;
  }
  CHECK(std::abs(scalar(L::cross_entropy_layout(constant(logits), oh)) - want) < 1e-6);

  auto f = [&](const std::vector<VarD>& v) { return L::cross_entropy_layout(v[0], onehot); };
  CHECK(gradcheck(f, {param({1, 8, 4, 4}, rng)}) < kTol);
}

TEST_CASE("least-squares gan loss") {
  CHECK(scalar(L::lsgan_loss<double>({constant(TensorD({1, 1, 3, 3}, 1.0))}, true)) == 0.0);
  CHECK(scalar(L::lsgan_loss<double>({constant(TensorD({1, 1, 3, 3}, 0.0))}, true)) == 1.0);
  CHECK(scalar(L::lsgan_loss<double>({constant(TensorD({1, 1, 3, 3}, 0.0))}, false)) == 0.0);

  Rng rng(3);
  const TensorD a = random_tensor({1, 1, 4, 4}, rng), b = random_tensor({1, 1, 2, 2}, rng);
  double ma = 0, mb = 0;
  for (int i = 0; i < 16; ++i) ma += (a[i] - 1) * (a[i] - 1) / 16;
  for (int i = 0; i < 4; ++i) mb += (b[i] - 1) * (b[i] - 1) / 4;
  CHECK(std::abs(scalar(L::lsgan_loss<double>({constant(a), constant(b)}, true)) - (ma + mb) / 2) < 1e-12);
  CHECK_THROWS_AS(L::lsgan_loss<double>({}, true), ContractError);

  auto f = [](const std::vector<VarD>& v) { return L::lsgan_loss<double>({v[0], v[1]}, false); };
  CHECK(gradcheck(f, {param({1, 1, 4, 4}, rng), param({1, 1, 2, 2}, rng)}) < kTol);
}

TEST_CASE("perceptual loss") {
  blocks::FeatureExtractor<double> fx;
  Rng rng(4);
  const TensorD a = random_tensor({1, 3, 16, 16}, rng, 0, 1);
  TensorD b = a;
  for (int y = 4; y < 10; ++y)
    for (int x = 4; x < 10; ++x) b(0, 1, y, x) = 1 - b(0, 1, y, x);
  CHECK(scalar(L::perceptual_loss(constant(a), constant(a), fx)) == 0.0);
  const double ab = scalar(L::perceptual_loss(constant(a), constant(b), fx));
  CHECK(ab > 0.0);
  CHECK(ab == doctest::Approx(scalar(L::perceptual_loss(constant(b), constant(a), fx))).epsilon(1e-12));

  const auto fa = fx.forward(constant(a)), fb = fx.forward(constant(b));
  double oracle = 0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    double m = 0;
    for (Eigen::Index i = 0; i < fa[l].value().size(); ++i) m += std::abs(fa[l].value()[i] - fb[l].value()[i]);
    oracle += m / static_cast<double>(fa[l].value().size());
  }
  CHECK(std::abs(ab - oracle) < 1e-9);

  auto x = param({1, 3, 8, 8}, rng, 0, 1);
  const TensorD ref = random_tensor({1, 3, 8, 8}, rng, 0, 1);
  auto f = [&](const std::vector<VarD>& v) { return L::perceptual_loss(v[0], constant(ref), fx); };
  CHECK(gradcheck(f, {x}) < kTol);
}

TEST_CASE("feature matching loss") {
  Rng rng(5);
  std::vector<std::vector<VarD>> real{{constant(random_tensor({1, 2, 4, 4}, rng)), constant(random_tensor({1, 4, 2, 2}, rng))}};
  CHECK(scalar(L::feature_matching_loss(real, real)) == 0.0);

  auto offset = [&](double c) {
    std::vector<std::vector<VarD>> out{{}};
    for (const auto& f : real[0]) out[0].push_back(affine(f, 1.0, c));
    return out;
  };
  CHECK(scalar(L::feature_matching_loss(real, offset(0.25))) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(scalar(L::feature_matching_loss(real, offset(0.5))) == doctest::Approx(0.5).epsilon(1e-12));

  std::vector<std::vector<VarD>> fake{{constant(random_tensor({1, 2, 4, 4}, rng)), constant(random_tensor({1, 4, 2, 2}, rng))}};
  double oracle = 0;
  for (int l = 0; l < 2; ++l) {
    const auto& r = real[0][l].value();
    const auto& q = fake[0][l].value();
    double m = 0;
    for (Eigen::Index i = 0; i < r.size(); ++i) m += std::abs(r[i] - q[i]) / static_cast<double>(r.size());
    oracle += m / 2;
  }
  CHECK(std::abs(scalar(L::feature_matching_loss(real, fake)) - oracle) < 1e-12);

  auto f = [&](const std::vector<VarD>& v) { return L::feature_matching_loss(real, std::vector<std::vector<VarD>>{{v[0], v[1]}}); };
  CHECK(gradcheck(f, {param({1, 2, 4, 4}, rng, 2, 3), param({1, 4, 2, 2}, rng, 2, 3)}) < kTol);
  CHECK_THROWS_AS(L::feature_matching_loss(real, {}), ContractError);
}

TEST_CASE("attention warping loss") {
  Rng rng(6);
  const TensorD corr = random_tensor({1, 1, 16, 16}, rng);
  const TensorD clothes = random_tensor({1, 2, 4, 4}, rng);
  const auto warped = from_rows(blocks::attention_transform(constant(corr), to_rows(constant(clothes)), 100.0), 4, 4);
  CHECK(scalar(L::attention_warp_loss(constant(corr), constant(clothes), warped, 100.0)) < 1e-12);

  // uniform attention averages the source: constant maps give |mean(src) - target|
  TensorD src({1, 1, 4, 4});
  for (int i = 0; i < 16; ++i) src[i] = i;
  const double l = scalar(L::attention_warp_loss(constant(TensorD({1, 1, 16, 16})), constant(src),
                                                 constant(TensorD({1, 1, 4, 4}, 2.0)), 100.0));
  CHECK(std::abs(l - 5.5) < 1e-9);

  auto f = [](const std::vector<VarD>& v) { return L::attention_warp_loss(v[0], v[1], v[2], 3.0); };
  CHECK(gradcheck(f, {param({1, 1, 16, 16}, rng), param({1, 2, 4, 4}, rng), param({1, 2, 4, 4}, rng, 3, 4)}) < kTol);
}

TEST_CASE("loss weights and combinations") {
  const L::LossWeights w;
  const double defaults[8] = {10, 1, 0.1, 1, 10, 1, 1, 1};
  for (int i = 1; i <= 8; ++i) CHECK(w[i] == defaults[i - 1]);

  CHECK(L::combine_layout_loss({}) == 0.0);
  CHECK(L::combine_rgb_loss({}) == 0.0);
  CHECK(L::combine_layout_loss({1, 1, 1, 1}) == 12.1);
  CHECK(L::combine_rgb_loss({1, 1, 1, 1}) == 13.0);

  const L::LayoutParts base{0.3, 0.2, 0.7, 0.4};
  L::LayoutParts doubled = base;
  doubled.tv *= 2;
  CHECK(L::combine_layout_loss(doubled) - L::combine_layout_loss(base) == doctest::Approx(0.1 * 0.7).epsilon(1e-12));

  auto one = constant(TensorD({1, 1, 1, 1}, 1.0));
  CHECK(scalar(L::combine_layout_loss(one, one, one, one)) == 12.1);
  CHECK(scalar(L::combine_rgb_loss(one, one, one, one)) == 13.0);
}
