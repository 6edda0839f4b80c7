#include "doctest.h"

#include "bvton/image_io.hpp"
#include "bvton/ops.hpp"
#include "bvton/synth_data.hpp"

#include <filesystem>
#include <fstream>
#include <set>

using namespace bvton;
namespace fs = std::filesystem;

namespace {

bool same(const TensorF& a, const TensorF& b) {
  return a.shape() == b.shape() && (a.array() == b.array()).all();
}

void check_equal(const data::SampleRecord& a, const data::SampleRecord& b) {
  CHECK(a.id == b.id);
  CHECK(a.style == b.style);
  CHECK(same(a.person, b.person));
  CHECK((a.labels.array() == b.labels.array()).all());
  CHECK(same(a.heatmaps, b.heatmaps));
  CHECK(same(a.part_masks, b.part_masks));
  REQUIRE(a.pose.size() == b.pose.size());
  for (std::size_t j = 0; j < a.pose.size(); ++j) {
    CHECK(a.pose[j].x == b.pose[j].x);
    CHECK(a.pose[j].y == b.pose[j].y);
    CHECK(a.pose[j].visible == b.pose[j].visible);
  }
  CHECK(a.has_inshop == b.has_inshop);
  if (a.has_inshop) {
    CHECK(same(a.inshop, b.inshop));
    CHECK(same(a.inshop_mask, b.inshop_mask));
    CHECK(same(a.inshop_parts, b.inshop_parts));
    CHECK(same(a.gt_flow, b.gt_flow));
    CHECK((a.theta.source.array() == b.theta.source.array()).all());
    CHECK((a.theta.target.array() == b.theta.target.array()).all());
  }
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  check_equal(data::generate_sample(3, data::Mode::Paired), data::generate_sample(3, data::Mode::Paired));
  const auto a = data::generate_sample(3, data::Mode::Paired), b = data::generate_sample(4, data::Mode::Paired);
  CHECK_FALSE(same(a.person, b.person));
}

TEST_CASE("resolution contract") {
  CHECK_THROWS_AS(data::generate_sample(1, data::Mode::Paired, 100, 96), ContractError);
  CHECK_THROWS_AS(data::generate_sample(1, data::Mode::Paired, 128, 0), ContractError);
  const auto r = data::generate_sample(1, data::Mode::Unpaired, 64, 48);
  CHECK(r.height() == 64);
  CHECK(r.width() == 48);
  CHECK_FALSE(r.has_inshop);
}

TEST_CASE("record invariants") {
  for (std::uint64_t seed = 0; seed < 6; ++seed)
    for (auto mode : {data::Mode::Paired, data::Mode::Unpaired}) {
      const auto r = data::generate_sample(seed, mode);
      const auto layout = r.layout();
      for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x) {
          float total = 0;
          for (int c = 0; c < data::kClasses; ++c) total += layout(0, c, y, x);
          CHECK(total == 1.0f);
          float parts = 0;
          for (int p = 0; p < data::kParts; ++p) parts += r.part_masks(0, p, y, x);
          // the part masks partition the upper-clothes region
          CHECK(parts == (r.labels(y, x) == data::kUpper ? 1.0f : 0.0f));
        }
      CHECK(r.pose.size() == static_cast<std::size_t>(data::kJoints));
      CHECK(r.heatmaps.shape() == Shape{1, data::kJoints, r.height(), r.width()});
      CHECK(r.has_inshop == (mode == data::Mode::Paired));
      CHECK(r.person.array().minCoeff() >= 0.0f);
      CHECK(r.person.array().maxCoeff() <= 1.0f);
      if (r.has_inshop) {
        CHECK(r.gt_flow.shape() == Shape{1, 2, r.height(), r.width()});
        CHECK(r.inshop_mask.array().sum() > 0);
      }
    }
}

TEST_CASE("analytic flow reproduces the worn top") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto r = data::generate_sample(seed, data::Mode::Paired);
    const TensorF warped = backward_warp(r.inshop, r.gt_flow);
    const TensorF m = r.upper_mask();
    double err = 0, pixels = 0;
    for (int y = 0; y < r.height(); ++y)
      for (int x = 0; x < r.width(); ++x) {
        if (m(0, 0, y, x) == 0) continue;
        pixels += 1;
        for (int c = 0; c < 3; ++c) err += std::abs(warped(0, c, y, x) - r.person(0, c, y, x)) / 3.0;
      }
    REQUIRE(pixels > 0);
    CHECK(err / pixels < 0.02);
  }
}

TEST_CASE("control points map in-shop geometry onto the person") {
  const auto r = data::generate_sample(5, data::Mode::Paired);
  // Warping the in-shop mask with the fitted deformation should cover most of the worn top.
  const TensorF moved = warp::apply_control_deform(r.inshop_mask, r.theta);
  const TensorF m = r.upper_mask();
  double hit = 0, total = 0;
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    total += m[i];
    hit += m[i] * (moved[i] > 0.5f ? 1 : 0);
  }
  CHECK(hit / total > 0.8);
}

TEST_CASE("all wearing styles are produced") {
  std::set<data::Style> seen;
  for (std::uint64_t seed = 0; seed < 40; ++seed) seen.insert(data::generate_sample(seed, data::Mode::Unpaired, 64, 48).style);
  CHECK(seen.size() == 4);
  const auto forced = data::generate_sample(1, data::Mode::Unpaired, 128, 96, data::Style::Asymmetric);
  CHECK(forced.style == data::Style::Asymmetric);
}

TEST_CASE("dataset round trip") {
  TempDir dir("bvton_test_synth_rt");
  const auto entries = data::write_dataset(10, data::Mode::Paired, dir.path, 100);
  CHECK(entries.size() == 10);
  const auto manifest = data::read_manifest(dir.path);
  REQUIRE(manifest.size() == 10);
  for (const auto& e : manifest) {
    CHECK(fs::exists(dir.path / e.dir / "person.ppm"));
    CHECK(fs::exists(dir.path / e.dir / "gt_flow.bvfl"));
  }
  const auto loaded = data::load_dataset(dir.path);
  for (std::size_t i = 0; i < loaded.size(); ++i)
    check_equal(loaded[i], data::generate_sample(100 + i, data::Mode::Paired));

  // appending with disjoint seeds keeps ids unique
  data::write_dataset(5, data::Mode::Unpaired, dir.path, 100);
  data::write_dataset(5, data::Mode::Unpaired, dir.path, 105);
  std::set<std::string> ids;
  for (const auto& e : data::read_manifest(dir.path)) ids.insert(e.id);
  CHECK(ids.size() == 20);
  CHECK_THROWS_AS(data::write_dataset(1, data::Mode::Unpaired, dir.path, 100), ContractError);
}

TEST_CASE("load errors are descriptive") {
  TempDir dir("bvton_test_synth_err");
  CHECK_THROWS_AS(data::read_manifest(dir.path), io::FormatError);
  data::write_dataset(1, data::Mode::Paired, dir.path, 7);
  const auto e = data::read_manifest(dir.path).front();

  fs::remove(dir.path / e.dir / "gt_flow.bvfl");
  try {
    data::read_sample(e, dir.path);
    FAIL("expected a format error");
  } catch (const io::FormatError& err) {
    CHECK(std::string(err.what()).find("gt_flow.bvfl") != std::string::npos);
  }

  io::write_text(dir.path / "manifest.tsv", "id\tmode\nbroken line\n");
  CHECK_THROWS_AS(data::read_manifest(dir.path), io::FormatError);
  io::write_text(dir.path / "manifest.tsv", "x 1 tucked 1 128 96 x\n");
  CHECK_THROWS_AS(data::read_manifest(dir.path), io::FormatError);
}

TEST_CASE("image and flow files round trip") {
  TempDir dir("bvton_test_io");
  Rng rng(1);
  TensorF img(Shape{1, 3, 5, 7});
  for (Eigen::Index i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.uniform());
  img = io::quantize_image(img);
  io::write_ppm(dir.path / "a.ppm", img);
  CHECK(same(io::read_ppm(dir.path / "a.ppm"), img));

  TensorF flow(Shape{1, 2, 3, 4});
  for (Eigen::Index i = 0; i < flow.size(); ++i) flow[i] = static_cast<float>(rng.normal() * 10);
  io::write_flow(dir.path / "f.bvfl", flow);
  CHECK(same(io::read_flow(dir.path / "f.bvfl"), flow));
  CHECK(fs::file_size(dir.path / "f.bvfl") == 16 + 4 * 24);

  io::write_text(dir.path / "bad.bvfl", "BVFL1234");
  CHECK_THROWS_AS(io::read_flow(dir.path / "bad.bvfl"), io::FormatError);
  io::write_text(dir.path / "bad.ppm", "P6\n4 4\n255\nxx");
  CHECK_THROWS_AS(io::read_ppm(dir.path / "bad.ppm"), io::FormatError);
  CHECK(io::fnv1a_file(dir.path / "f.bvfl").size() == 16);
}
