#include "bvton/utom.hpp"

#include "bvton/metrics.hpp"

#include <cmath>

namespace bvton::utom {

namespace {

std::string disc_descriptor() { return "utom-disc/patch(depth=3,base=16,scales=2)"; }

TensorF degraded_mask(const Config& cfg, const TensorF& clothes_mask) {
  return warp::degenerate_mask(clothes_mask, cfg.h_alpha, cfg.w_alpha);
}

struct Step {
  TensorF input, layout, mask, target;
};

Step build_step(const Config& cfg, const data::SampleRecord& s, Rng& rng) {
  const TensorF mc = s.upper_mask();
  const TensorF cm = train::masked(s.person, mc);
  TensorF mis;
  if (cfg.misalign) {
    mis = make_pseudo_pair(s.person, mc, cfg.alpha_aug, cfg.beta_aug, rng).misaligned;
  } else {
    mis = cm;
  }
  const TensorF dm = degraded_mask(cfg, mc);
  return {train::cat({agnostic_person(s.person, s.labels), mis}), degraded_layout(s.layout(), dm), dm, s.person};
}

}  // namespace

PseudoPair make_pseudo_pair(const TensorF& person, const TensorF& clothes_mask, double alpha_aug, double beta_aug,
                            Rng& rng, bool allow_equal) {
  require(alpha_aug >= 0.0, "make_pseudo_pair: alpha_aug must be non-negative");
  require(allow_equal ? beta_aug >= alpha_aug : beta_aug > alpha_aug,
          "make_pseudo_pair: beta_aug must exceed alpha_aug");
  require(clothes_mask.c() == 1 && clothes_mask.h() == person.h() && clothes_mask.w() == person.w(),
          "make_pseudo_pair: mask does not match the image");
  for (Eigen::Index i = 0; i < clothes_mask.size(); ++i)
    require(clothes_mask[i] == 0 || clothes_mask[i] == 1, "make_pseudo_pair: clothes mask must be binary");
  PseudoPair p;
  const TensorF cm = train::masked(person, clothes_mask);
  const TensorF a = warp::random_affine(cm, alpha_aug, rng, &p.v_clothes);
  const TensorF b = warp::random_affine(clothes_mask, beta_aug, rng, &p.v_mask);
  p.misaligned = train::masked(train::masked(a, clothes_mask), b);
  p.target = person;
  return p;
}

TensorF agnostic_person(const TensorF& person, const LabelMap& labels) {
  require(labels.rows() == person.h() && labels.cols() == person.w(), "agnostic_person: label map size mismatch");
  TensorF out = person;
  for (int y = 0; y < person.h(); ++y)
    for (int x = 0; x < person.w(); ++x) {
      const int l = labels(y, x);
      if (l == data::kUpper || l == data::kLeftArm || l == data::kRightArm)
        for (int c = 0; c < person.c(); ++c) out(0, c, y, x) = 0;
    }
  return out;
}

TensorF degraded_layout(const TensorF& layout, const TensorF& degraded_mask) {
  require(layout.c() == data::kClasses && layout.n() == 1, "degraded_layout: expects a (1,K,H,W) layout");
  require(degraded_mask.h() == layout.h() && degraded_mask.w() == layout.w(), "degraded_layout: mask size mismatch");
  TensorF out = layout;
  for (int y = 0; y < layout.h(); ++y)
    for (int x = 0; x < layout.w(); ++x) {
      if (degraded_mask(0, 0, y, x) >= 0.5) {
        for (int c = 0; c < data::kClasses; ++c) out(0, c, y, x) = 0;
        out(0, data::kUpper, y, x) = 1;
      } else {
        // clothes mass left outside the degenerated region goes to background
        out(0, data::kBackground, y, x) += out(0, data::kUpper, y, x);
        out(0, data::kUpper, y, x) = 0;
      }
    }
  return out;
}

Model::Model(std::uint64_t seed, const Config& cfg)
    : cfg_(cfg), store_("utom/" + cfg.gen.descriptor()), disc_store_(disc_descriptor()) {
  Rng rng(seed);
  gen_ = Generator<Real>(store_, "utom", cfg.gen, rng);
  disc_ = blocks::PatchDiscriminator<Real>(disc_store_, "utom_d", 3 + kCondChannels + 1, rng, 3, 16, 2);
}

train::LossTrace train(Model& model, const std::vector<data::SampleRecord>& data, const train::StageOptions& opt) {
  require(!data.empty(), "utom::train: empty dataset");
  const Config& cfg = model.config();
  const int steps = train::resolve_steps(opt.steps, opt.epochs, static_cast<int>(data.size()), opt.batch);
  nn::Adam<Real> g_opt(model.params().vars(), opt.lr, opt.beta1, opt.beta2);
  nn::Adam<Real> d_opt(model.disc_params().vars(), opt.lr_disc, opt.beta1, opt.beta2);
  train::BatchSampler sampler(static_cast<int>(data.size()), opt.seed);
  Rng rng(opt.seed ^ 0x27d4eb2fULL);
  train::LossTrace trace({"total", "perceptual", "l1", "gan", "feat", "disc"});

  for (int step = 0; step < steps; ++step) {
    std::vector<TensorF> input, layout, mask, target, cond;
    for (int i : sampler.next(opt.batch)) {
      Step s = build_step(cfg, data[i], rng);
      cond.push_back(train::cat({s.layout, s.mask}));
      input.push_back(std::move(s.input));
      layout.push_back(std::move(s.layout));
      mask.push_back(std::move(s.mask));
      target.push_back(std::move(s.target));
    }
    const VarF vin = constant(stack_samples<Real>(input));
    const VarF vcond = constant(stack_samples<Real>(cond));
    const VarF real = constant(stack_samples<Real>(target));
    const VarF fake = model.gen().forward(vin, stack_samples<Real>(layout), stack_samples<Real>(mask));

    const auto d_real = model.disc().forward(real, vcond);
    const auto d_fake = model.disc().forward(detach(fake), vcond);
    const VarF d_loss = affine(add(losses::lsgan_loss(d_real.scores, true), losses::lsgan_loss(d_fake.scores, false)),
                               Real(0.5));
    d_opt.zero_grad();
    backward(d_loss);
    d_opt.step();

    std::vector<std::vector<VarF>> real_feats;
    {
      NoGradGuard guard;
      for (const auto& scale : model.disc().forward(real, vcond).features) {
        std::vector<VarF> fs;
        for (const auto& f : scale) fs.push_back(constant(f.value()));
        real_feats.push_back(fs);
      }
    }
    const auto g_out = model.disc().forward(fake, vcond);
    const VarF perc = losses::perceptual_loss(train::to_model_range(fake), train::to_model_range(real),
                                              model.features());
    const VarF l1 = losses::l1_loss(fake, real);
    const VarF gan = losses::lsgan_loss(g_out.scores, true);
    const VarF feat = losses::feature_matching_loss(real_feats, g_out.features);
    const VarF total = losses::combine_rgb_loss(perc, l1, gan, feat, cfg.weights);
    g_opt.zero_grad();
    backward(total);
    g_opt.step();
    model.disc_params().zero_grad();

    const double value = total.value()[0];
    require(std::isfinite(value), "utom::train: loss diverged at step " + std::to_string(step));
    trace.add({value, perc.value()[0], l1.value()[0], gan.value()[0], feat.value()[0], d_loss.value()[0]});
    if (opt.on_step) opt.on_step(step, value);
  }
  return trace;
}

Conditioning make_conditioning(const Model& model, const TensorF& layout, const TensorF& clothes_mask) {
  const TensorF dm = degraded_mask(model.config(), warp::binarize(clothes_mask));
  return {degraded_layout(layout, dm), dm};
}

TensorF synthesize(const Model& model, const TensorF& agnostic, const TensorF& clothes, const TensorF& layout,
                   const TensorF& clothes_mask, const TensorF* reference, const TensorF* keep) {
  require(agnostic.shape() == clothes.shape(), "utom::synthesize: agnostic/clothes shape mismatch");
  const Conditioning c = make_conditioning(model, layout, clothes_mask);
  TensorF out;
  {
    NoGradGuard guard;
    out = model.gen().forward(constant(train::cat({agnostic, clothes})), c.layout, c.mask).value();
  }
  if (reference && keep) {
    require(reference->shape() == out.shape() && keep->h() == out.h(), "utom::synthesize: keep/reference mismatch");
    for (int ch = 0; ch < out.c(); ++ch)
      for (int y = 0; y < out.h(); ++y)
        for (int x = 0; x < out.w(); ++x) {
          const Real k = (*keep)(0, 0, y, x);
          out(0, ch, y, x) = k * (*reference)(0, ch, y, x) + (1 - k) * out(0, ch, y, x);
        }
  }
  return out;
}

TensorF keep_mask(const LabelMap& reference, const LabelMap& predicted) {
  require(reference.rows() == predicted.rows() && reference.cols() == predicted.cols(), "keep_mask: size mismatch");
  auto generated = [](int l) { return l == data::kUpper || l == data::kLeftArm || l == data::kRightArm; };
  TensorF keep(Shape{1, 1, static_cast<int>(reference.rows()), static_cast<int>(reference.cols())});
  for (int y = 0; y < keep.h(); ++y)
    for (int x = 0; x < keep.w(); ++x)
      keep(0, 0, y, x) = generated(reference(y, x)) || generated(predicted(y, x)) ? 0 : 1;
  return keep;
}

double reconstruction_ssim(const Model& model, const std::vector<data::SampleRecord>& data, bool composite) {
  require(!data.empty(), "reconstruction_ssim: empty dataset");
  double total = 0;
  for (const auto& s : data) {
    const TensorF mc = s.upper_mask();
    const TensorF agn = agnostic_person(s.person, s.labels);
    const TensorF keep = keep_mask(s.labels, s.labels);
    const TensorF out = composite ? synthesize(model, agn, train::masked(s.person, mc), s.layout(), mc, &agn, &keep)
                                  : synthesize(model, agn, train::masked(s.person, mc), s.layout(), mc);
    total += metrics::ssim(out, s.person);
  }
  return total / static_cast<double>(data.size());
}

double reconstruction_l1(const Model& model, const std::vector<data::SampleRecord>& data, std::uint64_t seed,
                         bool misalign) {
  require(!data.empty(), "reconstruction_l1: empty dataset");
  Config cfg = model.config();
  cfg.misalign = misalign;
  Rng rng(seed);
  double total = 0;
  NoGradGuard guard;
  for (const auto& s : data) {
    const Step st = build_step(cfg, s, rng);
    const TensorF out = model.gen().forward(constant(st.input), st.layout, st.mask).value();
    double e = 0;
    for (Eigen::Index i = 0; i < out.size(); ++i) e += std::abs(out[i] - st.target[i]);
    total += e / static_cast<double>(out.size());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace bvton::utom
