#pragma once

// Mask-guided clothes deformation: a flow from the person canvas into the
// (occlusion-free) in-shop clothes, conditioned on the target clothes mask
// and the pose.

#include "bvton/flow_stage.hpp"
#include "bvton/synth_data.hpp"

namespace bvton::mcdm {

/// Conditioning channels: in-shop clothes (3), target clothes mask (1), pose (18).
inline constexpr int kCondChannels = 3 + 1 + data::kJoints;

blocks::FlowConfig default_flow_config();

class Model : public flow::FlowModel {
 public:
  explicit Model(std::uint64_t seed, blocks::FlowConfig cfg = default_flow_config())
      : FlowModel("mcdm", std::move(cfg), seed) {}
};

struct Example {
  TensorF cond;
  flow::Targets targets;
};

/// Clothes are the occlusion-free in-shop clothes and their mask; the target is the worn top.
Example make_example(const data::SampleRecord& s);

train::LossTrace train(Model& model, const std::vector<data::SampleRecord>& paired, const train::StageOptions& opt,
                       const flow::LossConfig& loss = {});

struct Deformed {
  TensorF warped;  // (1,3,H,W) on the person canvas
  TensorF mask;    // warped clothes mask
  TensorF flow;    // (1,2,H,W)
};

Deformed deform_clothes(const Model& model, const TensorF& clothes, const TensorF& clothes_mask,
                        const TensorF& target_mask, const TensorF& heatmaps);

}  // namespace bvton::mcdm
