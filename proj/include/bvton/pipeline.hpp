#pragma once

// Orchestration of the full pipeline over a workspace directory:
//   data/{paired,unpaired,test}, checkpoints/, proxies/, logs/, tryon/, eval/.

#include "bvton/ccm.hpp"
#include "bvton/config.hpp"
#include "bvton/lmgm.hpp"
#include "bvton/mcdm.hpp"
#include "bvton/metrics.hpp"
#include "bvton/utom.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace bvton::pipeline {

/// A stage ran before the stage it depends on.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StageResult {
  std::string stage;
  train::LossTrace trace;
  double seconds = 0;
  std::map<std::string, double> metrics;

  double final_loss() const { return trace.steps() ? trace.row(trace.steps() - 1)[0] : 0.0; }
  std::string summary() const;
};

struct DataSummary {
  int paired = 0, unpaired = 0, test_cases = 0;
};

/// Paired, unpaired and high-fidelity test data. Test cases pair a reference
/// wearing a tucked top with an overlong or asymmetric in-shop top.
DataSummary gen_data(const config::PipelineConfig& cfg);

StageResult train_ccm(const config::PipelineConfig& cfg);
/// Canonical proxies of every unpaired sample; returns {valid, skipped}.
std::pair<int, int> extract_proxies(const config::PipelineConfig& cfg);
StageResult train_lmgm(const config::PipelineConfig& cfg);
StageResult train_mcdm(const config::PipelineConfig& cfg);
StageResult train_utom(const config::PipelineConfig& cfg);

enum class TryonMode { Conventional, HighFidelity };
enum class ClothesSource { InShop, Model };
const char* to_string(TryonMode m);
TryonMode parse_tryon_mode(const std::string& s);
ClothesSource parse_clothes_source(const std::string& s);

struct TryonResult {
  TensorF image;     // final try-on
  TensorF layout;    // predicted layered masks (1,K,H,W)
  TensorF warped;    // deformed clothes on the person canvas
  TensorF flow;
  TensorF keep;      // pixels copied from the reference
  int bottom_area = 0;  // visible bottom-clothes pixels of the layout
};

/// All trained modules, loaded from the workspace checkpoints.
class Inference {
 public:
  explicit Inference(const config::PipelineConfig& cfg);
  ~Inference();

  TryonResult run(const data::SampleRecord& person, const TensorF& clothes, const TensorF& clothes_mask,
                  TryonMode mode) const;
  /// Flat clothes for a donor sample: its in-shop image or its canonical proxy.
  std::pair<TensorF, TensorF> clothes_of(const data::SampleRecord& donor, ClothesSource source) const;

  const ccm::Model& ccm() const { return *ccm_; }
  const lmgm::Model& lmgm() const { return *lmgm_; }
  const mcdm::Model& mcdm() const { return *mcdm_; }
  const utom::Model& utom() const { return *utom_; }

 private:
  std::unique_ptr<ccm::Model> ccm_;
  std::unique_ptr<lmgm::Model> lmgm_;
  std::unique_ptr<mcdm::Model> mcdm_;
  std::unique_ptr<utom::Model> utom_;
};

/// Looks an id up in the paired, unpaired and test splits.
data::SampleRecord find_sample(const config::PipelineConfig& cfg, const std::string& id);

struct TestCase {
  std::string reference, clothes;
};
std::vector<TestCase> read_test_cases(const config::PipelineConfig& cfg);

/// Runs one try-on and writes final.ppm, layout.ppm, warped.ppm, flow.ppm and keep.pgm.
TryonResult tryon(const config::PipelineConfig& cfg, const std::string& person_id, const std::string& clothes_id,
                  ClothesSource source, TryonMode mode, const std::filesystem::path& out_dir);

/// split: train | test | self. Modes: both try-on modes are always evaluated.
metrics::Report eval(const config::PipelineConfig& cfg, const std::string& split);

/// Trains L-MGM and UTOM on 1/4, 1/2 and all of the unpaired data with
/// `steps` steps each, and reports the feature distance of the try-on results.
metrics::Report size_sweep(const config::PipelineConfig& cfg, int steps);

// Model seeds and option plumbing, shared with the test harness.
lmgm::Config lmgm_config(const config::PipelineConfig& cfg);
utom::Config utom_config(const config::PipelineConfig& cfg);
train::StageOptions stage_options(const config::PipelineConfig& cfg, const config::Stage& s, std::uint64_t salt);

}  // namespace bvton::pipeline
