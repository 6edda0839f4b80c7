#include "doctest.h"
#include "gradcheck.hpp"

#include "bvton/utom.hpp"

#include <cmath>

using namespace bvton;

namespace {

constexpr int kH = 64, kW = 48;

data::SampleRecord photo(std::uint64_t seed) { return data::generate_sample(seed, data::Mode::Unpaired, kH, kW); }

utom::Config small_config() {
  utom::Config c;
  c.gen.enc = {4, 4, 8, 8};
  c.gen.dec = {8, 8, 4, 4};
  c.h_alpha = 16;
  c.w_alpha = 12;
  return c;
}

}  // namespace

TEST_CASE("pseudo pairs stay inside the clothes mask") {
  const auto s = photo(1);
  const TensorF mc = s.upper_mask();
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    const auto p = utom::make_pseudo_pair(s.person, mc, 1, 4, rng);
    CHECK((p.target.array() == s.person.array()).all());
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < kH; ++y)
        for (int x = 0; x < kW; ++x)
          if (mc(0, 0, y, x) == 0) CHECK(p.misaligned(0, c, y, x) == 0);
  }
  CHECK_THROWS_AS(utom::make_pseudo_pair(s.person, mc, 4, 4, rng), ContractError);
  CHECK_THROWS_AS(utom::make_pseudo_pair(s.person, mc, 0, 0, rng), ContractError);

  // identity affine when the ordering check is relaxed
  const auto id = utom::make_pseudo_pair(s.person, mc, 0, 0, rng, true);
  CHECK((id.misaligned.array() == train::masked(s.person, mc).array()).all());

  Rng r1(9), r2(9);
  const auto a = utom::make_pseudo_pair(s.person, mc, 1, 4, r1);
  const auto b = utom::make_pseudo_pair(s.person, mc, 1, 4, r2);
  CHECK((a.misaligned.array() == b.misaligned.array()).all());

  TensorF soft = mc;
  soft[0] = 0.5;
  CHECK_THROWS_AS(utom::make_pseudo_pair(s.person, soft, 1, 4, rng), ContractError);
}

TEST_CASE("the two affine draws are uncorrelated") {
  const TensorF img(Shape{1, 3, 8, 8}, 0.5);
  const TensorF mask(Shape{1, 1, 8, 8}, 1.0);
  Rng rng(3);
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto p = utom::make_pseudo_pair(img, mask, 1, 4, rng);
    sa += p.v_clothes;
    sb += p.v_mask;
    saa += p.v_clothes * p.v_clothes;
    sbb += p.v_mask * p.v_mask;
    sab += p.v_clothes * p.v_mask;
    CHECK(std::abs(p.v_clothes) <= 1);
    CHECK(std::abs(p.v_mask) <= 4);
  }
  const double cov = sab / n - (sa / n) * (sb / n);
  const double corr = cov / std::sqrt((saa / n - sa * sa / n / n) * (sbb / n - sb * sb / n / n));
  CHECK(std::abs(corr) < 0.05);
}

TEST_CASE("degraded layout bookkeeping") {
  const auto s = photo(4);
  const TensorF dm = warp::degenerate_mask(s.upper_mask(), 16, 12);
  const TensorF sp = utom::degraded_layout(s.layout(), dm);
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x) {
      CHECK(sp(0, data::kUpper, y, x) == dm(0, 0, y, x));
      double sum = 0;
      for (int c = 0; c < data::kClasses; ++c) sum += sp(0, c, y, x);
      CHECK(sum == 1);
      const int l = s.labels(y, x);
      if (dm(0, 0, y, x) == 0 && l != data::kUpper) CHECK(sp(0, l, y, x) == 1);
      if (dm(0, 0, y, x) == 0 && l == data::kUpper) CHECK(sp(0, data::kBackground, y, x) == 1);
    }
}

TEST_CASE("agnostic person removes clothes and arms only") {
  const auto s = photo(5);
  const TensorF a = utom::agnostic_person(s.person, s.labels);
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x) {
      const int l = s.labels(y, x);
      const bool removed = l == data::kUpper || l == data::kLeftArm || l == data::kRightArm;
      for (int c = 0; c < 3; ++c) CHECK(a(0, c, y, x) == (removed ? 0 : s.person(0, c, y, x)));
    }
}

TEST_CASE("generator gradient") {
  Rng rng(6);
  nn::ParamStore<double> store;
  utom::GeneratorConfig cfg;
  cfg.enc = {2, 2, 2, 2};
  cfg.dec = {2, 2, 2, 2};
  utom::Generator<double> gen(store, "g", cfg, rng);
  Rng data(7);
  testing::TensorD layout(Shape{1, data::kClasses, 8, 8});
  testing::TensorD mask(Shape{1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      mask(0, 0, y, x) = (x >= 2 && x < 6 && y >= 1 && y < 7) ? 1 : 0;
      layout(0, mask(0, 0, y, x) == 1 ? data::kUpper : (x + y) % data::kClasses, y, x) = 1;
    }
  std::vector<testing::VarD> inputs = store.vars();
  inputs.push_back(testing::param({1, utom::kInputChannels, 8, 8}, data, 0, 1));
  auto f = [&](const std::vector<testing::VarD>& v) { return testing::project(gen.forward(v.back(), layout, mask)); };
  CHECK(testing::gradcheck(f, inputs) < 1e-4);
  CHECK_THROWS_AS(gen.forward(testing::param({1, 5, 8, 8}, data), layout, mask), ContractError);
}

TEST_CASE("synthesis output and compositing") {
  utom::Model model(8, small_config());
  const auto s = photo(9);
  const TensorF mc = s.upper_mask();
  const TensorF agn = utom::agnostic_person(s.person, s.labels);
  const TensorF clothes = train::masked(s.person, mc);
  const TensorF out = utom::synthesize(model, agn, clothes, s.layout(), mc);
  CHECK(out.shape() == s.person.shape());
  CHECK(out.array().allFinite());
  CHECK((out.array() >= 0).all());
  CHECK((out.array() <= 1).all());
  CHECK((utom::synthesize(model, agn, clothes, s.layout(), mc).array() == out.array()).all());

  const TensorF keep = utom::keep_mask(s.labels, s.labels);
  const TensorF comp = utom::synthesize(model, agn, clothes, s.layout(), mc, &s.person, &keep);
  for (int y = 0; y < kH; ++y)
    for (int x = 0; x < kW; ++x)
      for (int c = 0; c < 3; ++c)
        CHECK(comp(0, c, y, x) == (keep(0, 0, y, x) == 1 ? s.person(0, c, y, x) : out(0, c, y, x)));
}

TEST_CASE("synthesizer training") {
  std::vector<data::SampleRecord> d{photo(10), photo(11), photo(12), photo(13)};
  train::StageOptions o;
  o.steps = 2;
  o.batch = 2;
  utom::Model a(1, small_config()), b(1, small_config());
  const auto ta = utom::train(a, d, o);
  const auto tb = utom::train(b, d, o);
  REQUIRE(ta.steps() == 2);
  for (std::size_t i = 0; i < ta.steps(); ++i) CHECK(ta.row(i) == tb.row(i));
  CHECK_THROWS_AS(utom::train(a, {}, o), ContractError);

  // aligned inputs reconstruct better than misaligned ones before training
  utom::Model fresh(2, small_config());
  CHECK(utom::reconstruction_l1(fresh, d, 3, false) < utom::reconstruction_l1(fresh, d, 3, true));
  const double ssim = utom::reconstruction_ssim(fresh, d, false);
  CHECK(ssim > -1);
  CHECK(ssim < 1);
}
