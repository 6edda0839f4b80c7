#include "doctest.h"

#include "bvton/checkpoint.hpp"
#include "bvton/config.hpp"
#include "bvton/image_io.hpp"
#include "bvton/lmgm.hpp"

#include <filesystem>
#include <fstream>

using namespace bvton;
using config::ConfigError;
using config::PipelineConfig;

TEST_CASE("desk defaults carry the published training constants") {
  const PipelineConfig c = config::desk_profile();
  CHECK(c.lambda == std::array<double, 8>{10, 1, 0.1, 1, 10, 1, 1, 1});
  CHECK(c.ccm.batch == 4);
  CHECK(c.lmgm.batch == 4);
  CHECK(c.mcdm.batch == 4);
  CHECK(c.utom.batch == 2);
  CHECK(c.beta1 == 0.5);
  CHECK(c.beta2 == 0.999);
  CHECK(c.alpha_aug == 1);
  CHECK(c.beta_aug == 4);
  for (const auto* s : {&c.ccm, &c.lmgm, &c.mcdm, &c.utom}) CHECK(s->steps <= 300);
  CHECK_NOTHROW(config::validate(c));

  const PipelineConfig p = config::paper_profile();
  CHECK(p.ccm.lr == 1e-6);
  CHECK(p.mcdm.lr == 5e-5);
  CHECK(p.utom.lr == 1e-4);
  CHECK(p.utom.lr_disc == 4e-4);
  CHECK(p.h_alpha == 100);
  CHECK(p.w_alpha == 75);
  CHECK(p.ccm.epochs == 20);
  CHECK_NOTHROW(config::validate(p));
}

TEST_CASE("print and parse round trip") {
  for (PipelineConfig c : {config::desk_profile(), config::paper_profile()}) {
    CHECK(config::parse(config::print(c)) == c);
  }
  PipelineConfig c;
  c.seed = 123456789012345ULL;
  c.ccm.lr = 0.1 + 0.2;
  c.lambda[2] = 1.0 / 3.0;
  c.workspace = "/tmp/some where";
  c.lmgm_clothes = "inshop";
  CHECK(config::parse(config::print(c)) == c);
}

TEST_CASE("parse errors name the problem") {
  CHECK_THROWS_AS(config::parse("[ccm]\nsteps = ten\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[ccm]\nsteeps = 10\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("steps = 10\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[ccm\nsteps = 10\n"), ConfigError);
  CHECK_THROWS_AS(config::parse("[ccm]\nsteps 10\n"), ConfigError);
  try {
    config::parse("# header\n[ccm]\nsteps = 10\nlr = x\n");
    FAIL("expected a parse error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 4") != std::string::npos);
    CHECK(std::string(e.what()).find("ccm.lr") != std::string::npos);
  }
  const auto c = config::parse("# comment\n[lmgm]\n  p = 0.25   # inline\n\n[run]\nseed=9\n");
  CHECK(c.p == 0.25);
  CHECK(c.seed == 9);
}

TEST_CASE("overrides and validation") {
  PipelineConfig c;
  config::set(c, "utom.h_alpha=16");
  CHECK(c.h_alpha == 16);
  CHECK_THROWS_AS(config::set(c, "utom.h_alpha"), ConfigError);
  CHECK_THROWS_AS(config::set(c, "nosuch.key=1"), ConfigError);

  auto bad = [](const std::string& assignment) {
    PipelineConfig b;
    config::set(b, assignment);
    CHECK_THROWS_AS(config::validate(b), ConfigError);
  };
  bad("utom.beta_aug=1");
  bad("lmgm.p=1.5");
  bad("run.height=100");
  bad("utom.w_alpha=200");
  bad("lmgm.clothes=photos");
  bad("run.profile=huge");
}

TEST_CASE("loading a file starts from the profile it names") {
  const auto path = std::filesystem::temp_directory_path() / "bvton_test.cfg";
  {
    std::ofstream os(path);
    os << "[run]\nprofile = paper\n[ccm]\nsteps = 7\n";
  }
  const auto c = config::load(path);
  CHECK(c.profile == "paper");
  CHECK(c.ccm.steps == 7);
  CHECK(c.h_alpha == 100);
  CHECK(c.utom.lr == 1e-4);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(config::load(path), ConfigError);
}

TEST_CASE("checkpoints round trip and refuse mismatches") {
  const auto dir = std::filesystem::temp_directory_path() / "bvton_test_ckpt";
  std::filesystem::remove_all(dir);
  lmgm::Config small;
  small.net.widths = {4, 4, 4};
  small.net.blocks = 1;
  lmgm::Model a(1, small), b(2, small);
  ckpt::save(dir / "a.ckpt", a.params());
  CHECK(ckpt::peek_descriptor(dir / "a.ckpt") == a.params().descriptor());
  ckpt::load(dir / "a.ckpt", b.params());
  const auto va = a.params().vars(), vb = b.params().vars();
  REQUIRE(va.size() == vb.size());
  for (std::size_t i = 0; i < va.size(); ++i) CHECK((va[i].value().array() == vb[i].value().array()).all());

  auto other = small;
  other.net.widths = {4, 8, 4};
  lmgm::Model c(1, other);
  CHECK_THROWS_AS(ckpt::load(dir / "a.ckpt", c.params()), ckpt::CheckpointError);

  io::write_text(dir / "junk.ckpt", "not a checkpoint");
  CHECK_THROWS_AS(ckpt::load(dir / "junk.ckpt", b.params()), ckpt::CheckpointError);
  CHECK_THROWS(ckpt::load(dir / "missing.ckpt", b.params()));
  std::filesystem::remove_all(dir);
}
