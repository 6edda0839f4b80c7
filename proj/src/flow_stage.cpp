#include "bvton/flow_stage.hpp"

#include "bvton/losses.hpp"
#include "bvton/warp.hpp"

namespace bvton::flow {

FlowModel::FlowModel(const std::string& kind, blocks::FlowConfig cfg, std::uint64_t seed)
    : store_(kind + "/" + cfg.descriptor()) {
  Rng rng(seed);
  net_ = blocks::FlowEstimator<Real>(store_, kind, std::move(cfg), rng);
}

TensorF FlowModel::predict(const TensorF& cond) const {
  NoGradGuard guard;
  return net_.forward(constant(cond)).back().value();
}

namespace {

TensorF at_level(const TensorF& t, int h, int w) {
  return t.h() == h && t.w() == w ? t : warp::area_resize(t, h, w);
}

}  // namespace

VarF objective(const std::vector<VarF>& pyramid, const Targets& t, const LossConfig& cfg,
               std::vector<double>* parts) {
  require(!pyramid.empty(), "flow::objective: empty pyramid");
  std::vector<VarF> terms;
  std::vector<Real> weights;
  const std::size_t first = cfg.multiscale ? 0 : pyramid.size() - 1;
  const Real level_w = Real(1) / static_cast<Real>(pyramid.size() - first);
  VarF fine_l1, fine_mask;
  for (std::size_t l = first; l < pyramid.size(); ++l) {
    const VarF& f = pyramid[l];
    const int h = f.shape().h, w = f.shape().w;
    const VarF l1 = losses::flow_l1_loss(constant(at_level(t.target, h, w)), constant(at_level(t.source, h, w)), f);
    const VarF ml = losses::flow_l1_loss(constant(at_level(t.target_mask, h, w)),
                                         constant(at_level(t.source_mask, h, w)), f);
    terms.push_back(l1);
    weights.push_back(level_w);
    terms.push_back(ml);
    weights.push_back(level_w * static_cast<Real>(cfg.mask_weight));
    fine_l1 = l1;
    fine_mask = ml;
  }
  const VarF tv = warp::total_variation(pyramid.back());
  terms.push_back(tv);
  weights.push_back(static_cast<Real>(cfg.tv_weight));
  if (parts) *parts = {fine_l1.value()[0], fine_mask.value()[0], tv.value()[0]};
  return weighted_sum(terms, weights);
}

train::LossTrace train_flow(FlowModel& model, int dataset_size, const BatchBuilder& build,
                            const train::StageOptions& opt, const LossConfig& loss) {
  require(dataset_size > 0, "train_flow: empty dataset");
  const int steps = train::resolve_steps(opt.steps, opt.epochs, dataset_size, opt.batch);
  nn::Adam<Real> adam(model.params().vars(), opt.lr, opt.beta1, opt.beta2);
  train::BatchSampler sampler(dataset_size, opt.seed);
  train::LossTrace trace({"total", "l1", "mask", "tv"});
  for (int step = 0; step < steps; ++step) {
    const Batch b = build(sampler.next(opt.batch));
    const auto pyramid = model.net().forward(constant(b.cond));
    std::vector<double> parts;
    const VarF total = objective(pyramid, b.targets, loss, &parts);
    adam.zero_grad();
    backward(total);
    adam.step();
    const double value = total.value()[0];
    require(std::isfinite(value), "train_flow: loss diverged at step " + std::to_string(step));
    trace.add({value, parts[0], parts[1], parts[2]});
    if (opt.on_step) opt.on_step(step, value);
  }
  return trace;
}

}  // namespace bvton::flow
