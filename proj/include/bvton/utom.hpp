#pragma once

// Unpaired try-on synthesis: pseudo pairs from single photos, and a
// SPADE/MaskNorm generator fusing the agnostic person with warped clothes.

#include "bvton/blocks.hpp"
#include "bvton/losses.hpp"
#include "bvton/synth_data.hpp"
#include "bvton/train.hpp"

namespace bvton::utom {

/// Generator input: agnostic person (3) + clothes on the person canvas (3).
inline constexpr int kInputChannels = 6;
/// SPADE conditioning: layout with degenerated clothes channel (K) + degenerated mask (1).
inline constexpr int kCondChannels = data::kClasses;

struct PseudoPair {
  TensorF misaligned;  // M_c * A_alpha(C_m) * A_beta(M_c)
  TensorF target;      // the original person
  double v_clothes = 0, v_mask = 0;
};

/// Misaligned clothes from a single photo; `allow_equal` relaxes beta > alpha for tests.
PseudoPair make_pseudo_pair(const TensorF& person, const TensorF& clothes_mask, double alpha_aug, double beta_aug,
                            Rng& rng, bool allow_equal = false);

/// Person with upper clothes and arms removed.
TensorF agnostic_person(const TensorF& person, const LabelMap& labels);

/// Layout whose clothes channel is replaced by the degenerated mask: clothes
/// channel := C'_m; inside C'_m every other channel is 0; pixels that were
/// clothes but fall outside C'_m become background; all else unchanged.
TensorF degraded_layout(const TensorF& layout, const TensorF& degraded_mask);

struct GeneratorConfig {
  std::array<int, 4> enc{16, 16, 32, 64};  // full, 1/2, 1/4, 1/8
  std::array<int, 4> dec{64, 32, 16, 8};  // SPADE residual block widths, coarse to fine

  std::string descriptor() const {
    std::string s = "spadegen(enc=";
    for (int i = 0; i < 4; ++i) s += std::to_string(enc[i]) + (i < 3 ? "," : "");
    s += ",dec=";
    for (int i = 0; i < 4; ++i) s += std::to_string(dec[i]) + (i < 3 ? "," : "");
    return s + ")";
  }
};

/// U-shaped generator: strided encoder to 1/8, then SPADE/MaskNorm residual
/// blocks with x2 upsampling and encoder skips; output in [0,1].
template <typename S>
class Generator {
 public:
  Generator() = default;
  Generator(nn::ParamStore<S>& store, const std::string& prefix, const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    int c = kInputChannels;
    for (int l = 0; l < 4; ++l) {
      enc_.push_back(nn::make_conv(store, prefix + ".enc" + std::to_string(l), c, cfg.enc[l], 3, l == 0 ? 1 : 2, rng));
      c = cfg.enc[l];
    }
    for (int b = 0; b < 4; ++b) {
      const int in = b == 0 ? cfg.enc[3] : cfg.dec[b - 1] + cfg.enc[3 - b];
      blocks_.emplace_back(store, prefix + ".block" + std::to_string(b), in, cfg.dec[b], kCondChannels, rng);
    }
    out_ = nn::make_conv(store, prefix + ".out", cfg.dec[3], 3, 3, 1, rng);
  }

  const GeneratorConfig& config() const { return cfg_; }

  /// `layout` is the degraded layout S' and `mask` the degenerated clothes
  /// mask C'_m, both at input resolution.
  Var<S> forward(const Var<S>& input, const Tensor<S>& layout, const Tensor<S>& mask) const {
    const Shape s = input.shape();
    require(s.c == kInputChannels, "Generator: expected " + std::to_string(kInputChannels) + " input channels");
    require(s.h % 8 == 0 && s.w % 8 == 0, "Generator: resolution must be divisible by 8");
    require(layout.c() == kCondChannels && layout.h() == s.h && mask.h() == s.h,
            "Generator: conditioning does not match the input");
    std::vector<Var<S>> skips;
    Var<S> x = input;
    for (const auto& conv : enc_) {
      x = leaky_relu(conv(x));
      skips.push_back(x);
    }
    for (int b = 0; b < 4; ++b) {
      const int f = 8 >> b;
      if (b > 0) x = concat_channels<S>({upsample2(x), skips[3 - b]});
      const auto cond = blocks::resize_condition(layout, mask, s.h / f, s.w / f);
      x = blocks_[b].forward(x, cond);
    }
    const Var<S> y = tanh(out_(leaky_relu(x)));
    return affine(y, S(0.5), S(0.5));
  }

 private:
  GeneratorConfig cfg_;
  std::vector<nn::Conv2d<S>> enc_;
  std::vector<blocks::SpadeResBlock<S>> blocks_;
  nn::Conv2d<S> out_;
};

struct Config {
  GeneratorConfig gen;
  double alpha_aug = 1.0;
  double beta_aug = 4.0;
  int h_alpha = 32, w_alpha = 24;
  bool misalign = true;  // off: identity affine (diagnostic mode)
  losses::LossWeights weights;
};

class Model {
 public:
  Model(std::uint64_t seed, const Config& cfg = {});
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  nn::ParamStore<Real>& params() { return store_; }
  const nn::ParamStore<Real>& params() const { return store_; }
  nn::ParamStore<Real>& disc_params() { return disc_store_; }
  const Generator<Real>& gen() const { return gen_; }
  const blocks::PatchDiscriminator<Real>& disc() const { return disc_; }
  const blocks::FeatureExtractor<Real>& features() const { return features_; }
  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  nn::ParamStore<Real> store_, disc_store_;
  Generator<Real> gen_;
  blocks::PatchDiscriminator<Real> disc_;
  blocks::FeatureExtractor<Real> features_;
};

/// Trace columns: total, perceptual, l1, gan, feat, disc.
train::LossTrace train(Model& model, const std::vector<data::SampleRecord>& data, const train::StageOptions& opt);

/// Generator conditioning for a layout and clothes mask at input resolution.
struct Conditioning {
  TensorF layout;  // S'
  TensorF mask;    // C'_m
};
Conditioning make_conditioning(const Model& model, const TensorF& layout, const TensorF& clothes_mask);

/// Try-on image in [0,1]. Pixels where `keep` is 1 are copied from `reference`.
TensorF synthesize(const Model& model, const TensorF& agnostic, const TensorF& clothes, const TensorF& layout,
                   const TensorF& clothes_mask, const TensorF* reference = nullptr, const TensorF* keep = nullptr);

/// Pixels a try-on copies from the reference: neither the reference nor the
/// predicted layout has upper clothes or arms there.
TensorF keep_mask(const LabelMap& reference, const LabelMap& predicted);

/// Mean SSIM of aligned reconstructions (clothes = on-model clothes, ground-truth
/// layout) over a set; `composite` pastes kept reference pixels as at try-on.
double reconstruction_ssim(const Model& model, const std::vector<data::SampleRecord>& data, bool composite = true);

/// Mean L1 of reconstructions from pseudo pairs drawn with `seed`.
double reconstruction_l1(const Model& model, const std::vector<data::SampleRecord>& data, std::uint64_t seed,
                         bool misalign);

}  // namespace bvton::utom
