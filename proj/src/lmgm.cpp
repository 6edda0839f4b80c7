#include "bvton/lmgm.hpp"

#include "bvton/warp.hpp"

namespace bvton::lmgm {

namespace {

TensorF label_mask(const LabelMap& labels, std::initializer_list<int> classes) {
  TensorF m(Shape{1, 1, static_cast<int>(labels.rows()), static_cast<int>(labels.cols())});
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    for (int c : classes)
      if (labels.data()[i] == c) m[i] = 1;
  return m;
}

std::string disc_descriptor(const Config& cfg) { return "lmgm-disc/patch(depth=3,base=16,scales=2)"; }

}  // namespace

TensorF base_retain_mask(const LabelMap& labels) { return label_mask(labels, {data::kFace, data::kHair}); }

TensorF retain_mask(const LabelMap& labels, bool with_bottom) {
  return with_bottom ? label_mask(labels, {data::kFace, data::kHair, data::kBottom}) : base_retain_mask(labels);
}

bool draw_bottom(double p, Rng& rng) {
  require(p >= 0.0 && p <= 1.0, "lmgm: bottom-retain probability p must lie in [0, 1]");
  return rng.uniform() < p;
}

TensorF agnostic_layout(const LabelMap& labels, const TensorF& retain) {
  const int h = static_cast<int>(labels.rows()), w = static_cast<int>(labels.cols());
  require(retain.h() == h && retain.w() == w, "agnostic_layout: retain mask size mismatch");
  TensorF t(Shape{1, data::kClasses, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) t(0, retain(0, 0, y, x) > 0 ? labels(y, x) : data::kBackground, y, x) = 1;
  return t;
}

TensorF parsing_input(const LabelMap& labels, const TensorF& retain) {
  return train::cat({agnostic_layout(labels, retain), retain});
}

Inputs make_inputs(const TensorF& clothes, const TensorF& clothes_mask, const data::SampleRecord& person,
                   const TensorF& retain) {
  Inputs in;
  in.clothes = train::cat({clothes, clothes_mask});
  in.pose = person.heatmaps;
  in.parsing = parsing_input(person.labels, retain);
  in.retain = retain;
  in.labels = person.labels;
  return in;
}

Model::Model(std::uint64_t seed, const Config& cfg)
    : cfg_(cfg), store_("lmgm/" + cfg.net.descriptor()), disc_store_(disc_descriptor(cfg)) {
  Rng rng(seed);
  net_ = LayoutNet<Real>(store_, "lmgm", cfg.net, rng);
  disc_ = blocks::PatchDiscriminator<Real>(disc_store_, "lmgm_d", data::kClasses + kPoseChannels + kParsingChannels,
                                           rng, 3, 16, 2);
}

train::LossTrace train(Model& model, const std::vector<Example>& data, const train::StageOptions& opt) {
  require(!data.empty(), "lmgm::train: empty dataset");
  const Config& cfg = model.config();
  require(cfg.p >= 0.0 && cfg.p <= 1.0, "lmgm: bottom-retain probability p must lie in [0, 1]");
  for (const auto& e : data) {
    require(e.person != nullptr, "lmgm::train: example without a person");
    require(e.clothes.h() == e.person->height() && e.clothes_mask.c() == 1,
            "lmgm::train: clothes for " + e.person->id + " do not match the model resolution");
  }
  const int steps = train::resolve_steps(opt.steps, opt.epochs, static_cast<int>(data.size()), opt.batch);
  nn::Adam<Real> g_opt(model.params().vars(), opt.lr, opt.beta1, opt.beta2);
  nn::Adam<Real> d_opt(model.disc_params().vars(), opt.lr_disc, opt.beta1, opt.beta2);
  train::BatchSampler sampler(static_cast<int>(data.size()), opt.seed);
  Rng rng(opt.seed ^ 0x5bd1e995ULL);
  const auto& w = cfg.weights;
  const Real alpha = static_cast<Real>(cfg.net.alpha);
  train::LossTrace trace({"total", "ce", "gan", "tv", "warp", "disc"});

  for (int step = 0; step < steps; ++step) {
    std::vector<TensorF> clothes, pose, parsing, onehot, cmap, tmap;
    for (int i : sampler.next(opt.batch)) {
      const auto& e = data[i];
      const TensorF retain = retain_mask(e.person->labels, draw_bottom(cfg.p, rng));
      const Inputs in = make_inputs(e.clothes, e.clothes_mask, *e.person, retain);
      clothes.push_back(in.clothes);
      pose.push_back(in.pose);
      parsing.push_back(in.parsing);
      onehot.push_back(e.person->layout());
      const int h8 = e.person->height() / 8, w8 = e.person->width() / 8;
      cmap.push_back(warp::area_resize(e.clothes_mask, h8, w8));
      tmap.push_back(warp::area_resize(e.person->upper_mask(), h8, w8));
    }
    const VarF vc = constant(stack_samples<Real>(clothes));
    const VarF vp = constant(stack_samples<Real>(pose));
    const VarF vs = constant(stack_samples<Real>(parsing));
    const TensorF truth = stack_samples<Real>(onehot);
    const VarF cond = concat_channels<Real>({vp, vs});

    const auto out = model.net().forward(vc, vp, vs);
    const VarF sample = blocks::gumbel_softmax(out.logits, cfg.tau, rng, true);

    // discriminator step on the detached sample
    const auto d_real = model.disc().forward(constant(truth), cond);
    const auto d_fake = model.disc().forward(detach(sample), cond);
    const VarF d_loss = affine(add(losses::lsgan_loss(d_real.scores, true), losses::lsgan_loss(d_fake.scores, false)),
                               Real(0.5));
    d_opt.zero_grad();
    backward(d_loss);
    d_opt.step();

    const VarF ce = losses::cross_entropy_layout(out.logits, truth);
    const VarF gan = losses::lsgan_loss(model.disc().forward(sample, cond).scores, true);
    const VarF tv = warp::total_variation(softmax_channels(out.logits));
    const VarF wl = losses::attention_warp_loss(out.correlation, constant(stack_samples<Real>(cmap)),
                                                constant(stack_samples<Real>(tmap)), alpha);
    const VarF total = losses::combine_layout_loss(ce, gan, tv, wl, w);
    g_opt.zero_grad();
    backward(total);
    g_opt.step();
    model.disc_params().zero_grad();

    const double value = total.value()[0];
    require(std::isfinite(value), "lmgm::train: loss diverged at step " + std::to_string(step));
    trace.add({value, ce.value()[0], gan.value()[0], tv.value()[0], wl.value()[0], d_loss.value()[0]});
    if (opt.on_step) opt.on_step(step, value);
  }
  return trace;
}

TensorF predict_layout(const Model& model, const Inputs& in) {
  NoGradGuard guard;
  const auto out = model.net().forward(constant(in.clothes), constant(in.pose), constant(in.parsing));
  TensorF probs = softmax_channels(out.logits).value();
  for (int y = 0; y < probs.h(); ++y)
    for (int x = 0; x < probs.w(); ++x) {
      if (in.retain(0, 0, y, x) == 0) continue;
      for (int c = 0; c < probs.c(); ++c) probs(0, c, y, x) = c == in.labels(y, x) ? 1 : 0;
    }
  return probs;
}

TensorF upper_channel_mask(const TensorF& layout) {
  TensorF m(Shape{layout.n(), 1, layout.h(), layout.w()});
  for (int n = 0; n < layout.n(); ++n)
    for (int y = 0; y < layout.h(); ++y)
      for (int x = 0; x < layout.w(); ++x)
        m(n, 0, y, x) = layout(n, data::kUpper, y, x) >= Real(warp::kBinarizeThreshold) ? 1 : 0;
  return m;
}

HighFidelity highfidelity_layout(const Model& model, const TensorF& clothes, const TensorF& clothes_mask,
                                 const data::SampleRecord& person, const TensorF& bottom_mask) {
  HighFidelity hf;
  const TensorF base = base_retain_mask(person.labels);
  hf.first_pass = predict_layout(model, make_inputs(clothes, clothes_mask, person, base));
  const TensorF top = upper_channel_mask(hf.first_pass);
  hf.occluded_bottom = TensorF(bottom_mask.shape());
  hf.occluded_bottom.array() = bottom_mask.array() * (Real(1) - top.array());
  hf.retain = data::mask_union(base, hf.occluded_bottom);
  hf.layout = predict_layout(model, make_inputs(clothes, clothes_mask, person, hf.retain));
  return hf;
}

double pixel_accuracy(const Model& model, const std::vector<Example>& data) {
  require(!data.empty(), "pixel_accuracy: empty dataset");
  double hit = 0, total = 0;
  for (const auto& e : data) {
    const TensorF retain = retain_mask(e.person->labels, true);
    const LabelMap pred = data::argmax_labels(predict_layout(model, make_inputs(e.clothes, e.clothes_mask, *e.person, retain)));
    hit += (pred.array() == e.person->labels.array()).count();
    total += static_cast<double>(pred.size());
  }
  return hit / total;
}

}  // namespace bvton::lmgm
