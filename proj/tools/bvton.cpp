// Command-line entry point for the try-on pipeline.

#include "bvton/checkpoint.hpp"
#include "bvton/image_io.hpp"
#include "bvton/pipeline.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <cstdlib>
#include <iostream>

namespace {

using namespace bvton;

enum Exit { kOk = 0, kConfigError = 2, kDependencyError = 3, kRuntimeError = 4 };

struct Globals {
  std::string config_path, out, resolution;
  std::vector<std::string> overrides;
  std::int64_t seed = -1;
  bool deterministic = false;
};

config::PipelineConfig make_config(const Globals& g) {
  config::PipelineConfig cfg;
  std::string path = g.config_path;
  if (path.empty())
    if (const char* env = std::getenv("BVTON_CONFIG")) path = env;
  if (!path.empty()) cfg = config::load(path);
  for (const auto& o : g.overrides) config::set(cfg, o);
  if (g.seed >= 0) cfg.seed = static_cast<std::uint64_t>(g.seed);
  if (!g.out.empty()) cfg.workspace = g.out;
  if (!g.resolution.empty()) {
    const auto x = g.resolution.find('x');
    if (x == std::string::npos) throw config::ConfigError("--resolution must look like HxW, e.g. 128x96");
    config::set(cfg, "run.height=" + g.resolution.substr(0, x));
    config::set(cfg, "run.width=" + g.resolution.substr(x + 1));
  }
  config::validate(cfg);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bvton: virtual try-on trained from unpaired fashion photos"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Config file (default: $BVTON_CONFIG, else the desk profile)");
  app.add_option("--seed", g.seed, "Global seed");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, bitwise-reproducible execution");
  app.add_option("--out", g.out, "Workspace directory");
  app.add_option("--resolution", g.resolution, "Image size HxW (multiples of 8)");
  app.add_option("--set", g.overrides, "Override a config value: section.key=value")->take_all();

  auto* gen = app.add_subcommand("gen-data", "Render paired, unpaired and test data");
  int n_paired = -1, n_unpaired = -1, n_test = -1;
  gen->add_option("--paired", n_paired, "Number of paired samples");
  gen->add_option("--unpaired", n_unpaired, "Number of unpaired samples");
  gen->add_option("--test", n_test, "Number of high-fidelity test cases");

  auto* t_ccm = app.add_subcommand("train-ccm", "Train the canonicalizing flow on paired data");
  auto* t_prox = app.add_subcommand("extract-proxies", "Extract canonical proxies of the unpaired photos");
  auto* t_lmgm = app.add_subcommand("train-lmgm", "Train the layered mask generator on proxies");
  auto* t_mcdm = app.add_subcommand("train-mcdm", "Train the mask-guided clothes deformation");
  auto* t_utom = app.add_subcommand("train-utom", "Train the unpaired try-on synthesizer");

  auto* t_try = app.add_subcommand("tryon", "Dress a person in another sample's top");
  std::string person, clothes, source = "inshop", mode = "high-fidelity", try_out;
  t_try->add_option("--person", person, "Reference person id")->required();
  t_try->add_option("--clothes", clothes, "Clothes donor id")->required();
  t_try->add_option("--clothes-source", source, "inshop | model")->capture_default_str();
  t_try->add_option("--mode", mode, "conventional | high-fidelity")->capture_default_str();
  t_try->add_option("--dir", try_out, "Output directory (default: <workspace>/tryon/<person>_<clothes>_<mode>)");

  auto* t_eval = app.add_subcommand("eval", "Evaluate a split in both try-on modes");
  std::string split = "test";
  bool sweep = false;
  int sweep_steps = 60;
  t_eval->add_option("--split", split, "train | test | self")->capture_default_str();
  t_eval->add_flag("--sweep", sweep, "Also run the unpaired data-size sweep");
  t_eval->add_option("--sweep-steps", sweep_steps, "Training steps per sweep point")->capture_default_str();

  auto* t_cfg = app.add_subcommand("print-config", "Print the effective configuration");
  bool paper = false;
  t_cfg->add_flag("--paper", paper, "Print the paper profile instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfigError;
  }

  try {
    config::PipelineConfig cfg = make_config(g);
    if (g.deterministic) Eigen::setNbThreads(1);

    if (t_cfg->parsed()) {
      std::cout << config::print(paper ? config::paper_profile() : cfg);
    } else if (gen->parsed()) {
      if (n_paired >= 0) cfg.n_paired = n_paired;
      if (n_unpaired >= 0) cfg.n_unpaired = n_unpaired;
      if (n_test >= 0) cfg.n_test = n_test;
      const auto s = pipeline::gen_data(cfg);
      std::cout << "gen-data: " << s.paired << " paired, " << s.unpaired << " unpaired, " << s.test_cases
                << " test cases in " << cfg.root() / "data" << "\n";
    } else if (t_ccm->parsed()) {
      std::cout << pipeline::train_ccm(cfg).summary() << "\n";
    } else if (t_prox->parsed()) {
      const auto [ok, skipped] = pipeline::extract_proxies(cfg);
      std::cout << "extract-proxies: " << ok << " proxies, " << skipped << " skipped\n";
    } else if (t_lmgm->parsed()) {
      std::cout << pipeline::train_lmgm(cfg).summary() << "\n";
    } else if (t_mcdm->parsed()) {
      std::cout << pipeline::train_mcdm(cfg).summary() << "\n";
    } else if (t_utom->parsed()) {
      std::cout << pipeline::train_utom(cfg).summary() << "\n";
    } else if (t_try->parsed()) {
      const auto m = pipeline::parse_tryon_mode(mode);
      const auto src = pipeline::parse_clothes_source(source);
      const std::filesystem::path dir =
          try_out.empty() ? cfg.root() / "tryon" / (person + "_" + clothes + "_" + pipeline::to_string(m)) : std::filesystem::path(try_out);
      const auto r = pipeline::tryon(cfg, person, clothes, src, m, dir);
      std::cout << "tryon: wrote " << dir.string() << " (bottom area " << r.bottom_area << " px)\n";
    } else if (t_eval->parsed()) {
      auto rep = pipeline::eval(cfg, split);
      if (sweep)
        for (const auto& row : pipeline::size_sweep(cfg, sweep_steps).rows) rep.rows.push_back(row);
      const auto dir = cfg.root() / "eval" / split;
      rep.write(dir);
      std::cout << rep.table();
    }
  } catch (const config::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const pipeline::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return kDependencyError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kOk;
}
