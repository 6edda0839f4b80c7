#pragma once

// Pipeline configuration: a sectioned `key = value` file. The defaults are the
// desk profile; paper_profile() holds the published training settings.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

namespace bvton::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Stage {
  int steps = 300;  // > 0 overrides epochs
  int epochs = 20;
  int batch = 4;
  double lr = 1e-4;
  double lr_disc = 1e-4;

  bool operator==(const Stage&) const = default;
};

struct PipelineConfig {
  std::string profile = "desk";
  std::uint64_t seed = 1;
  int height = 128, width = 96;
  std::string workspace = "bvton_run";

  int n_paired = 32, n_unpaired = 32, n_test = 8;

  double beta1 = 0.5, beta2 = 0.999;
  std::array<double, 8> lambda{10.0, 1.0, 0.1, 1.0, 10.0, 1.0, 1.0, 1.0};

  Stage ccm{200, 20, 4, 1e-4, 0.0};
  double ccm_tv = 0.01;

  Stage lmgm{300, 20, 4, 1e-4, 1e-4};
  double p = 0.5, tau = 1.0, alpha = 100.0;
  std::string lmgm_clothes = "proxy";  // proxy | inshop

  Stage mcdm{200, 20, 4, 5e-5, 0.0};
  double mcdm_tv = 0.01;

  Stage utom{300, 20, 2, 4e-4, 4e-4};
  double alpha_aug = 1.0, beta_aug = 4.0;
  int h_alpha = 32, w_alpha = 24;

  bool operator==(const PipelineConfig&) const = default;

  std::filesystem::path root() const { return workspace; }
  std::filesystem::path data_dir(const std::string& split) const { return root() / "data" / split; }
  std::filesystem::path checkpoint(const std::string& stage) const { return root() / "checkpoints" / (stage + ".ckpt"); }
  std::filesystem::path log(const std::string& stage) const { return root() / "logs" / (stage + ".tsv"); }
  std::filesystem::path proxy_dir() const { return root() / "proxies"; }
};

PipelineConfig desk_profile();
PipelineConfig paper_profile();

/// Throws ConfigError on unknown sections/keys, malformed lines or values.
PipelineConfig parse(const std::string& text, PipelineConfig base = {});
std::string print(const PipelineConfig& cfg);
PipelineConfig load(const std::filesystem::path& path);

/// Applies one `section.key=value` override.
void set(PipelineConfig& cfg, const std::string& assignment);
/// Range and consistency checks.
void validate(const PipelineConfig& cfg);

}  // namespace bvton::config
