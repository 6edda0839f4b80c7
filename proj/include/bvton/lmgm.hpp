#pragma once

// Layered mask generation: predicts the try-on semantic layout from flat
// clothes, pose and the retained regions of the reference person.

#include "bvton/blocks.hpp"
#include "bvton/losses.hpp"
#include "bvton/synth_data.hpp"
#include "bvton/train.hpp"

#include <map>

namespace bvton::lmgm {

/// Clothes stream: image (3) + mask (1). Parsing stream: agnostic layout (K) + retain mask (1).
inline constexpr int kClothesChannels = 4;
inline constexpr int kPoseChannels = data::kJoints;
inline constexpr int kParsingChannels = data::kClasses + 1;

struct NetConfig {
  std::array<int, 3> widths{16, 32, 64};
  int blocks = 3;
  double alpha = 100.0;

  std::string descriptor() const {
    return "layoutnet(w=" + std::to_string(widths[0]) + "," + std::to_string(widths[1]) + "," +
           std::to_string(widths[2]) + ",blocks=" + std::to_string(blocks) + ",alpha=" + std::to_string(alpha) + ")";
  }
};

template <typename S>
struct LayoutOutput {
  Var<S> logits;       // (N, K, H, W)
  Var<S> correlation;  // last tri-level block, rows index pose positions
};

/// Three strided encoders to 1/8 resolution, a tri-level stack, and a
/// decoder with pose/parsing skips.
template <typename S>
class LayoutNet {
 public:
  LayoutNet() = default;
  LayoutNet(nn::ParamStore<S>& store, const std::string& prefix, const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
    const int in[3] = {kClothesChannels, kPoseChannels, kParsingChannels};
    const char* names[3] = {"clothes", "pose", "parsing"};
    for (int s = 0; s < 3; ++s) {
      int c = in[s];
      for (int l = 0; l < 3; ++l) {
        enc_[s].push_back(nn::make_conv(store, prefix + ".enc_" + names[s] + std::to_string(l), c, cfg.widths[l], 3, 2, rng));
        c = cfg.widths[l];
      }
    }
    for (int b = 0; b < cfg.blocks; ++b)
      tri_.emplace_back(store, prefix + ".tri" + std::to_string(b), cfg.widths[2], rng, static_cast<S>(cfg.alpha));
    const int w0 = cfg.widths[0], w1 = cfg.widths[1], w2 = cfg.widths[2];
    dec_[0] = nn::make_conv(store, prefix + ".dec2", w2 + 2 * w1, w1, 3, 1, rng);
    dec_[1] = nn::make_conv(store, prefix + ".dec1", w1 + 2 * w0, w0, 3, 1, rng);
    dec_[2] = nn::make_conv(store, prefix + ".dec0", w0 + kPoseChannels + kParsingChannels, w0, 3, 1, rng);
    head_ = nn::make_conv(store, prefix + ".head", w0, data::kClasses, 3, 1, rng);
  }

  const NetConfig& config() const { return cfg_; }

  LayoutOutput<S> forward(const Var<S>& clothes, const Var<S>& pose, const Var<S>& parsing) const {
    const Shape s = pose.shape();
    require(s.h % 8 == 0 && s.w % 8 == 0, "LayoutNet: resolution must be divisible by 8");
    require(clothes.shape().c == kClothesChannels && s.c == kPoseChannels && parsing.shape().c == kParsingChannels,
            "LayoutNet: unexpected input channels");
    std::array<std::vector<Var<S>>, 3> feats;
    const Var<S> inputs[3] = {clothes, pose, parsing};
    for (int st = 0; st < 3; ++st) {
      Var<S> x = inputs[st];
      for (const auto& conv : enc_[st]) {
        x = leaky_relu(conv(x));
        feats[st].push_back(x);
      }
    }
    Var<S> fc = feats[0][2], fp = feats[1][2], fs = feats[2][2];
    Var<S> corr;
    for (const auto& block : tri_) {
      auto o = block.forward(fc, fp, fs);
      fc = o.clothes;
      fp = o.pose;
      fs = o.parsing;
      corr = o.correlation;
    }
    Var<S> x = leaky_relu(dec_[0](concat_channels<S>({upsample2(fs), feats[1][1], feats[2][1]})));
    x = leaky_relu(dec_[1](concat_channels<S>({upsample2(x), feats[1][0], feats[2][0]})));
    x = leaky_relu(dec_[2](concat_channels<S>({upsample2(x), pose, parsing})));
    return {head_(x), corr};
  }

 private:
  NetConfig cfg_;
  std::array<std::vector<nn::Conv2d<S>>, 3> enc_;
  std::vector<blocks::TriLevelBlock<S>> tri_;
  std::array<nn::Conv2d<S>, 3> dec_;
  nn::Conv2d<S> head_;
};

// ---------------------------------------------------------------- retained regions

/// Union of face and hair: always kept from the reference person.
TensorF base_retain_mask(const LabelMap& labels);
/// base plus bottom clothes when `with_bottom`.
TensorF retain_mask(const LabelMap& labels, bool with_bottom);
/// Bernoulli(p) draw of whether the bottom clothes are retained; p must lie in [0, 1].
bool draw_bottom(double p, Rng& rng);
/// One-hot of the reference layout inside `retain`, background elsewhere.
TensorF agnostic_layout(const LabelMap& labels, const TensorF& retain);
/// Parsing-stream input: agnostic layout plus the retain mask.
TensorF parsing_input(const LabelMap& labels, const TensorF& retain);

/// Layout-network inputs for one person and one flat garment.
struct Inputs {
  TensorF clothes;  // (1,4,H,W) image + mask
  TensorF pose;     // (1,18,H,W)
  TensorF parsing;  // (1,9,H,W)
  TensorF retain;   // (1,1,H,W)
  LabelMap labels;  // reference labels used for forcing
};

Inputs make_inputs(const TensorF& clothes, const TensorF& clothes_mask, const data::SampleRecord& person,
                   const TensorF& retain);

// ---------------------------------------------------------------- model

struct Config {
  NetConfig net;
  double p = 0.5;     // probability of retaining the bottom clothes while training
  double tau = 1.0;   // Gumbel temperature
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
  const LayoutNet<Real>& net() const { return net_; }
  const blocks::PatchDiscriminator<Real>& disc() const { return disc_; }
  const Config& config() const { return cfg_; }

 private:
  Config cfg_;
  nn::ParamStore<Real> store_, disc_store_;
  LayoutNet<Real> net_;
  blocks::PatchDiscriminator<Real> disc_;
};

/// Training record: a person plus the flat clothes fed to the clothes stream
/// (a canonical proxy, or the true in-shop clothes for the paired ablation).
struct Example {
  const data::SampleRecord* person = nullptr;
  TensorF clothes, clothes_mask;
};

/// Trace columns: total, ce, gan, tv, warp, disc.
train::LossTrace train(Model& model, const std::vector<Example>& data, const train::StageOptions& opt);

/// Softmax layout with retained pixels forced to their reference class.
TensorF predict_layout(const Model& model, const Inputs& in);

/// Binary (1,1,H,W) mask of the upper-clothes channel at 0.5.
TensorF upper_channel_mask(const TensorF& layout);

struct HighFidelity {
  TensorF layout;          // pass-2 layout
  TensorF first_pass;      // pass-1 layout
  TensorF occluded_bottom; // M_b^o
  TensorF retain;          // pass-2 retain mask
};

/// Two-pass inference: predict the top with only face and hair retained, keep
/// the part of the bottom clothes the top does not cover, and predict again.
HighFidelity highfidelity_layout(const Model& model, const TensorF& clothes, const TensorF& clothes_mask,
                                 const data::SampleRecord& person, const TensorF& bottom_mask);

/// Pixel accuracy of the forced argmax layout in conventional mode.
double pixel_accuracy(const Model& model, const std::vector<Example>& data);

}  // namespace bvton::lmgm
