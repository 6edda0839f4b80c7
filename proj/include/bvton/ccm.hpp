#pragma once

// Clothes canonicalization: learns per-part flows that carry worn clothes
// onto the flat in-shop canvas, then extracts canonical proxies.

#include "bvton/flow_stage.hpp"
#include "bvton/synth_data.hpp"

#include <filesystem>
#include <map>

namespace bvton::ccm {

/// C_t * (1 - deform(M_o, theta*)): hides in-shop pixels whose on-model
/// counterparts are covered by hair or bottom clothes.
TensorF remove_occlusion(const TensorF& clothes, const TensorF& occlusion, const warp::ControlGrid& theta_star);

/// Conditioning channels: part clothes (3), part mask (1), pose heatmaps (18).
inline constexpr int kCondChannels = 3 + 1 + data::kJoints;

blocks::FlowConfig default_flow_config();

class Model : public flow::FlowModel {
 public:
  explicit Model(std::uint64_t seed, blocks::FlowConfig cfg = default_flow_config())
      : FlowModel("ccm", std::move(cfg), seed) {}
};

/// Per-sample training tensors, one row per part.
struct Example {
  TensorF cond;         // (3, 22, H, W)
  TensorF target;       // (3, 3, H, W) occlusion-free in-shop part
  TensorF target_mask;  // (3, 1, H, W)
  TensorF source;       // (3, 3, H, W) on-model part
  TensorF source_mask;  // (3, 1, H, W)
};

/// Validates a paired sample and builds its per-part tensors.
Example make_example(const data::SampleRecord& s);

train::LossTrace train(Model& model, const std::vector<data::SampleRecord>& paired, const train::StageOptions& opt,
                       const flow::LossConfig& loss = {});

struct CanonicalProxy {
  std::string id;
  bool valid = false;
  std::string diagnostic;  // why extraction was skipped
  TensorF image;           // (1,3,H,W) on the in-shop canvas
  TensorF part_masks;      // (1,3,H,W) warped, binary

  TensorF mask() const;  // union of the part masks
};

/// Warps each part with its predicted flow and composites torso, then left
/// sleeve, then right sleeve, each overwriting what lies beneath it.
CanonicalProxy extract_proxy(const Model& model, const data::SampleRecord& s);

/// Proxy store: one subdirectory per id plus manifest.tsv (id, source, checksums).
void write_proxies(const std::filesystem::path& dir, const std::vector<CanonicalProxy>& proxies,
                   const std::string& source);
std::map<std::string, CanonicalProxy> read_proxies(const std::filesystem::path& dir);

}  // namespace bvton::ccm
