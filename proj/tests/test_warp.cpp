#include "doctest.h"
#include "gradcheck.hpp"

#include "bvton/warp.hpp"

#include <cmath>

using namespace bvton;
using namespace bvton::testing;
namespace warp = bvton::warp;

namespace {

// Independent bilinear oracle: explicit four-corner lookup with zero padding.
double oracle_sample(const TensorD& img, int n, int c, double sx, double sy) {
  auto px = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.w() || y >= img.h()) return 0.0;
    return img(n, c, y, x);
  };
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const double ax = sx - x0, ay = sy - y0;
  return px(x0, y0) * (1 - ax) * (1 - ay) + px(x0 + 1, y0) * ax * (1 - ay) + px(x0, y0 + 1) * (1 - ax) * ay +
         px(x0 + 1, y0 + 1) * ax * ay;
}

TensorD square_mask(int h, int w, int x0, int y0, int x1, int y1) {
  TensorD m({1, 1, h, w});
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) m(0, 0, y, x) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("backward_warp: zero flow is the identity") {
  Rng rng(1);
  TensorD img = random_tensor({2, 3, 5, 7}, rng);
  TensorD out = warp::backward_warp(img, TensorD({2, 2, 5, 7}));
  CHECK((out.array() == img.array()).all());
}

TEST_CASE("backward_warp: constant +1 shift of a ramp") {
  TensorD img({1, 1, 8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) img(0, 0, y, x) = 8 * y + x;
  TensorD flow({1, 2, 8, 8});
  flow.array().head(64).setConstant(1.0);
  TensorD out = warp::backward_warp(img, flow);
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 7; ++x) CHECK(out(0, 0, y, x) == img(0, 0, y, x + 1));
    CHECK(out(0, 0, y, 7) == 0.0);
  }
}

TEST_CASE("backward_warp: fully out of bounds gives zeros") {
  TensorD img({1, 3, 1, 1}, 0.7);
  TensorD flow({1, 2, 1, 1}, 5.0);
  CHECK(warp::backward_warp(img, flow).array().abs().maxCoeff() == 0.0);
}

TEST_CASE("backward_warp: random cases match the oracle") {
  Rng rng(2);
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    TensorD img = random_tensor({1, 2, 8, 8}, rng);
    TensorD flow = random_tensor({1, 2, 8, 8}, rng, -3.0, 3.0);
    TensorD out = warp::backward_warp(img, flow);
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          worst = std::max(worst, std::abs(out(0, c, y, x) -
                                           oracle_sample(img, 0, c, x + flow(0, 0, y, x), y + flow(0, 1, y, x))));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("backward_warp: shape mismatch is a contract error") {
  CHECK_THROWS_AS(warp::backward_warp(TensorD({1, 1, 4, 4}), TensorD({1, 2, 4, 5})), ContractError);
}

TEST_CASE("backward_warp: gradients w.r.t. image and flow") {
  Rng rng(3);
  auto img = param({1, 2, 6, 6}, rng);
  // integer part random, fractional part kept inside (0.2, 0.8) away from bilinear kinks
  TensorD f({1, 2, 6, 6});
  for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = rng.uniform_int(-2, 1) + rng.uniform(0.2, 0.8);
  VarD flow(f, true);
  auto fn = [](const std::vector<VarD>& v) { return project(warp::backward_warp(v[0], v[1])); };
  CHECK(gradcheck(fn, {img, flow}) < 1e-4);
}

TEST_CASE("total_variation") {
  SUBCASE("constant flow") { CHECK(warp::total_variation(TensorD({1, 2, 4, 4}, 1.5)) == 0.0); }
  SUBCASE("2x2 step in dx") {
    TensorD f({1, 2, 2, 2});
    f(0, 0, 0, 1) = 1;
    f(0, 0, 1, 1) = 1;
    // horizontal: two unit differences over 4 horizontal pairs (2 channels x 2 rows); vertical: none
    CHECK(warp::total_variation(f) == doctest::Approx(2.0 / 4.0));
  }
  SUBCASE("identity-offset ramp") {
    TensorD f({1, 2, 4, 4});
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        f(0, 0, y, x) = x;
        f(0, 1, y, x) = y;
      }
    // dx contributes 12 unit horizontal steps, dy 12 unit vertical steps, 24 pairs each way
    CHECK(warp::total_variation(f) == doctest::Approx(12.0 / 24.0 + 12.0 / 24.0));
  }
  SUBCASE("gradient") {
    Rng rng(4);
    auto f = param({1, 2, 4, 4}, rng);
    CHECK(gradcheck([](const std::vector<VarD>& v) { return warp::total_variation(v[0]); }, {f}) < 1e-4);
  }
  SUBCASE("nonnegative and zero only for constant fields") {
    Rng rng(5);
    for (int i = 0; i < 10; ++i) CHECK(warp::total_variation(random_tensor({1, 2, 3, 3}, rng)) > 0.0);
  }
}

TEST_CASE("semi-rigid control grids") {
  const warp::Points grid = warp::lattice(5, 0, 0, 15, 15);

  SUBCASE("reverse is an involution and fixes identity") {
    auto theta = warp::fit_semirigid(grid, grid);
    CHECK(warp::reverse_params(theta) == theta);
    warp::Points moved = grid;
    moved.col(0).array() += 1.5;
    auto t2 = warp::fit_semirigid(grid, moved);
    CHECK(warp::reverse_params(warp::reverse_params(t2)) == t2);
    // reversed translation carries content back by -1.5
    auto rev = warp::reverse_params(t2);
    CHECK(((rev.target - rev.source).col(0).array() + 1.5).abs().maxCoeff() < 1e-12);
    CHECK((rev.target - rev.source).col(1).array().abs().maxCoeff() < 1e-12);
  }

  SUBCASE("fit errors") {
    CHECK_THROWS_AS(warp::fit_semirigid(grid, grid.topRows(9)), ContractError);
    CHECK_THROWS_AS(warp::fit_semirigid(grid.topRows(3), grid.topRows(3)), ContractError);
    warp::Points same = warp::Points::Constant(25, 2, 4.0);
    CHECK_THROWS_AS(warp::fit_semirigid(same, grid), ContractError);
  }

  SUBCASE("identity deformation leaves a mask unchanged") {
    TensorD m = square_mask(16, 16, 4, 5, 10, 12);
    auto out = warp::apply_control_deform(m, warp::fit_semirigid(grid, grid));
    CHECK((out.array() - m.array()).abs().maxCoeff() < 1e-9);
  }

  SUBCASE("global +2 shift moves the square by two pixels") {
    TensorD m = square_mask(16, 16, 4, 4, 10, 10);
    warp::Points shifted = grid;
    shifted.col(0).array() += 2.0;
    auto out = warp::apply_control_deform(m, warp::fit_semirigid(grid, shifted));
    TensorD expect = square_mask(16, 16, 6, 4, 12, 10);
    CHECK((out.array() - expect.array()).abs().maxCoeff() < 1e-9);
  }

  SUBCASE("deform then reverse recovers the interior") {
    const warp::Points src = warp::lattice(5, 0, 0, 31, 31);
    warp::Points dst = src;
    for (int i = 0; i < dst.rows(); ++i) {
      dst(i, 0) += 1.2 * std::sin(src(i, 1) / 9.0);
      dst(i, 1) += 0.8 * std::cos(src(i, 0) / 11.0);
    }
    TensorD m = square_mask(32, 32, 8, 8, 24, 24);
    auto theta = warp::fit_semirigid(src, dst);
    auto there = warp::apply_control_deform(m, theta);
    auto back = warp::apply_control_deform(there, warp::reverse_params(theta));
    double err = 0;
    int cnt = 0;
    for (int y = 4; y < 28; ++y)
      for (int x = 4; x < 28; ++x) {
        err += std::abs(back(0, 0, y, x) - m(0, 0, y, x));
        ++cnt;
      }
    CHECK(err / cnt < 0.05);
  }
}

TEST_CASE("random affine") {
  Rng rng(6);
  TensorD img = random_tensor({1, 3, 6, 5}, rng, 0, 1);

  SUBCASE("r = 0 is the identity") {
    Rng r(1);
    CHECK((warp::random_affine(img, 0.0, r).array() == img.array()).all());
  }
  SUBCASE("fixed seed is deterministic") {
    Rng a(42), b(42);
    CHECK((warp::random_affine(img, 4.0, a).array() == warp::random_affine(img, 4.0, b).array()).all());
  }
  SUBCASE("draw lies in [-r, r]") {
    Rng a(7);
    for (int i = 0; i < 200; ++i) {
      double v = 0;
      warp::random_affine(img, 3.0, a, &v);
      CHECK(std::abs(v) <= 3.0);
    }
  }
  SUBCASE("quarter rotation of a 2x2 image matches point mapping") {
    TensorD small({1, 1, 2, 2});
    small(0, 0, 0, 0) = 1;
    small(0, 0, 0, 1) = 2;
    small(0, 0, 1, 0) = 3;
    small(0, 0, 1, 1) = 4;
    TensorD out = warp::affine_transform(small, 90.0, 0.0, 0.0);
    // forward map p' = R(90)(p - c) + c with c = (0.5, 0.5), image axes x right, y down
    TensorD expect({1, 1, 2, 2});
    for (int y = 0; y < 2; ++y)
      for (int x = 0; x < 2; ++x) {
        const double dx = x - 0.5, dy = y - 0.5;
        const int nx = static_cast<int>(std::lround(-dy + 0.5));
        const int ny = static_cast<int>(std::lround(dx + 0.5));
        expect(0, 0, ny, nx) = small(0, 0, y, x);
      }
    CHECK((out.array() - expect.array()).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("v = 90 also translates by 90 px, leaving the 2x2 canvas empty") {
    TensorD small({1, 1, 2, 2}, 1.0);
    CHECK(warp::affine_transform(small, 90.0, 90.0, 90.0).array().abs().maxCoeff() == 0.0);
  }
}

TEST_CASE("mask degeneration") {
  SUBCASE("constant masks are invariant") {
    TensorD ones({1, 1, 40, 30}, 1.0), zeros({1, 1, 40, 30});
    CHECK((warp::degenerate_mask(ones, 10, 7).array() == 1.0).all());
    CHECK((warp::degenerate_mask(zeros, 10, 7).array() == 0.0).all());
  }
  SUBCASE("a single pixel averages to 1/16 and vanishes") {
    TensorD m({1, 1, 400, 300});
    m(0, 0, 201, 150) = 1.0;
    TensorD small = warp::area_resize(m, 100, 75);
    CHECK(small.array().maxCoeff() == doctest::Approx(1.0 / 16.0));
    CHECK(warp::degenerate_mask(m).array().abs().maxCoeff() == 0.0);
  }
  SUBCASE("output is binary") {
    Rng rng(8);
    TensorD m = random_tensor({1, 1, 32, 24}, rng, 0, 1);
    TensorD d = warp::degenerate_mask(m, 8, 6);
    CHECK(((d.array() == 0.0) || (d.array() == 1.0)).all());
  }
  SUBCASE("bad target dims") {
    TensorD m({1, 1, 8, 8});
    CHECK_THROWS_AS(warp::degenerate_mask(m, 0, 4), ContractError);
    CHECK_THROWS_AS(warp::degenerate_mask(m, 16, 4), ContractError);
  }
}
