#include "bvton/mcdm.hpp"

#include "bvton/ccm.hpp"

namespace bvton::mcdm {

blocks::FlowConfig default_flow_config() {
  blocks::FlowConfig cfg;
  cfg.in_channels = kCondChannels;
  return cfg;
}

Example make_example(const data::SampleRecord& s) {
  require(s.has_inshop, "mcdm: sample " + s.id + " has no in-shop clothes (paired data required)");
  const auto theta_star = warp::reverse_params(s.theta);
  const TensorF clean = ccm::remove_occlusion(s.inshop_clothes(), s.occlusion_mask(), theta_star);
  const TensorF clean_mask = ccm::remove_occlusion(s.inshop_mask, s.occlusion_mask(), theta_star);
  const TensorF m = s.upper_mask();
  Example e;
  e.cond = train::cat({clean, m, s.heatmaps});
  e.targets = {train::masked(s.person, m), m, clean, clean_mask};
  return e;
}

train::LossTrace train(Model& model, const std::vector<data::SampleRecord>& paired, const train::StageOptions& opt,
                       const flow::LossConfig& loss) {
  require(!paired.empty(), "mcdm::train: empty dataset");
  std::vector<Example> ex;
  for (const auto& s : paired) ex.push_back(make_example(s));
  auto build = [&](const std::vector<int>& idx) {
    std::vector<TensorF> c, t, tm, s, sm;
    for (int i : idx) {
      c.push_back(ex[i].cond);
      t.push_back(ex[i].targets.target);
      tm.push_back(ex[i].targets.target_mask);
      s.push_back(ex[i].targets.source);
      sm.push_back(ex[i].targets.source_mask);
    }
    return flow::Batch{stack_samples<Real>(c),
                       {stack_samples<Real>(t), stack_samples<Real>(tm), stack_samples<Real>(s), stack_samples<Real>(sm)}};
  };
  return flow::train_flow(model, static_cast<int>(ex.size()), build, opt, loss);
}

Deformed deform_clothes(const Model& model, const TensorF& clothes, const TensorF& clothes_mask,
                        const TensorF& target_mask, const TensorF& heatmaps) {
  Deformed d;
  d.flow = model.predict(train::cat({clothes, target_mask, heatmaps}));
  d.warped = backward_warp(clothes, d.flow);
  d.mask = backward_warp(clothes_mask, d.flow);
  return d;
}

}  // namespace bvton::mcdm
