#pragma once

// Shared machinery of the two appearance-flow stages (canonicalization and
// deformation): the model wrapper, the warping objective and the loop.

#include "bvton/blocks.hpp"
#include "bvton/train.hpp"

#include <functional>
#include <string>

namespace bvton::flow {

struct LossConfig {
  double mask_weight = 1.0;  // part-mask warping term
  double tv_weight = 0.01;   // smoothness of the finest flow
  bool multiscale = true;    // also supervise the coarser pyramid levels
};

/// Full-resolution supervision of one batch: warp(source, flow) ~ target.
struct Targets {
  TensorF target, target_mask;
  TensorF source, source_mask;
};

struct Batch {
  TensorF cond;
  Targets targets;
};

class FlowModel {
 public:
  FlowModel(const std::string& kind, blocks::FlowConfig cfg, std::uint64_t seed);
  FlowModel(const FlowModel&) = delete;
  FlowModel& operator=(const FlowModel&) = delete;

  nn::ParamStore<Real>& params() { return store_; }
  const nn::ParamStore<Real>& params() const { return store_; }
  const blocks::FlowEstimator<Real>& net() const { return net_; }
  const blocks::FlowConfig& config() const { return net_.config(); }

  /// Finest flow for a conditioning batch, without recording a graph.
  TensorF predict(const TensorF& cond) const;

 private:
  nn::ParamStore<Real> store_;
  blocks::FlowEstimator<Real> net_;
};

/// Objective over a flow pyramid; `parts` receives (image L1, mask L1, TV) of the finest level.
VarF objective(const std::vector<VarF>& pyramid, const Targets& t, const LossConfig& cfg,
               std::vector<double>* parts = nullptr);

using BatchBuilder = std::function<Batch(const std::vector<int>& indices)>;

/// Adam loop over seeded batches. Trace columns: total, l1, mask, tv.
train::LossTrace train_flow(FlowModel& model, int dataset_size, const BatchBuilder& build,
                            const train::StageOptions& opt, const LossConfig& loss);

}  // namespace bvton::flow
