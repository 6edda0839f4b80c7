#pragma once

#include "bvton/blocks.hpp"

#include <array>
#include <vector>

namespace bvton::losses {

/// mean |target - W(source, flow)|
template <typename S>
Var<S> flow_l1_loss(const Var<S>& target, const Var<S>& source, const Var<S>& flow) {
  require(target.shape() == source.shape(), "flow_l1_loss: target/source shape mismatch");
  return mean(abs(sub(target, backward_warp(source, flow))));
}

template <typename S>
Var<S> l1_loss(const Var<S>& a, const Var<S>& b) {
  return mean(abs(sub(a, b)));
}

/// Mean per-pixel negative log-likelihood of a one-hot ground-truth layout.
template <typename S>
Var<S> cross_entropy_layout(const Var<S>& logits, const Tensor<S>& onehot) {
  require(logits.shape() == onehot.shape(), "cross_entropy_layout: shape mismatch");
  const S pixels = static_cast<S>(logits.shape().n) * static_cast<S>(logits.shape().plane());
  return affine(sum(mul(log_softmax_channels(logits), constant(onehot))), S(-1) / pixels);
}

/// Least-squares GAN term: squared distance of every score to the target label,
/// averaged per map and then over maps.
template <typename S>
Var<S> lsgan_loss(const std::vector<Var<S>>& scores, bool target_real) {
  require(!scores.empty(), "lsgan_loss: no score maps");
  const S label = target_real ? S(1) : S(0);
  std::vector<Var<S>> terms;
  for (const auto& s : scores) terms.push_back(mean(square(affine(s, S(1), -label))));
  return weighted_sum(terms, std::vector<S>(terms.size(), S(1) / static_cast<S>(terms.size())));
}

/// Sum over extractor levels of the mean absolute feature difference.
template <typename S>
Var<S> perceptual_loss(const Var<S>& a, const Var<S>& b, const blocks::FeatureExtractor<S>& extractor) {
  const auto fa = extractor.forward(a);
  const auto fb = extractor.forward(b);
  std::vector<Var<S>> terms;
  for (std::size_t i = 0; i < fa.size(); ++i) terms.push_back(l1_loss(fa[i], fb[i]));
  return weighted_sum(terms, std::vector<S>(terms.size(), S(1)));
}

/// Mean absolute difference per discriminator layer, averaged over layers and scales.
template <typename S>
Var<S> feature_matching_loss(const std::vector<std::vector<Var<S>>>& real,
                             const std::vector<std::vector<Var<S>>>& fake) {
  require(real.size() == fake.size() && !real.empty(), "feature_matching_loss: scale count mismatch");
  std::vector<Var<S>> terms;
  for (std::size_t s = 0; s < real.size(); ++s) {
    require(real[s].size() == fake[s].size(), "feature_matching_loss: layer count mismatch");
    for (std::size_t l = 0; l < real[s].size(); ++l) terms.push_back(l1_loss(fake[s][l], real[s][l]));
  }
  return weighted_sum(terms, std::vector<S>(terms.size(), S(1) / static_cast<S>(terms.size())));
}

/// L1 between the attention-warped clothes map and the target map, both
/// (N,C,h,w) and flattened to rows matching the correlation matrix.
template <typename S>
Var<S> attention_warp_loss(const Var<S>& corr, const Var<S>& clothes_map, const Var<S>& target_map, S alpha) {
  const Var<S> warped = blocks::attention_transform(corr, to_rows(clothes_map), alpha);
  return l1_loss(warped, to_rows(target_map));
}

struct LossWeights {
  // layout: CE, cGAN, TV, warp; rgb: perceptual, L1, cGAN, feature matching
  std::array<double, 8> lambda{10.0, 1.0, 0.1, 1.0, 10.0, 1.0, 1.0, 1.0};

  double& operator[](int i) { return lambda.at(static_cast<std::size_t>(i - 1)); }
  double operator[](int i) const { return lambda.at(static_cast<std::size_t>(i - 1)); }
};

struct LayoutParts {
  double ce = 0, gan = 0, tv = 0, warp = 0;
};
struct RgbParts {
  double perceptual = 0, l1 = 0, gan = 0, feat = 0;
};

inline double combine_layout_loss(const LayoutParts& p, const LossWeights& w = {}) {
  return w[1] * p.ce + w[2] * p.gan + w[3] * p.tv + w[4] * p.warp;
}
inline double combine_rgb_loss(const RgbParts& p, const LossWeights& w = {}) {
  return w[5] * p.perceptual + w[6] * p.l1 + w[7] * p.gan + w[8] * p.feat;
}

template <typename S>
Var<S> combine_layout_loss(const Var<S>& ce, const Var<S>& gan, const Var<S>& tv, const Var<S>& warp,
                           const LossWeights& w = {}) {
  return weighted_sum<S>({ce, gan, tv, warp}, {S(w[1]), S(w[2]), S(w[3]), S(w[4])});
}
template <typename S>
Var<S> combine_rgb_loss(const Var<S>& perceptual, const Var<S>& l1, const Var<S>& gan, const Var<S>& feat,
                        const LossWeights& w = {}) {
  return weighted_sum<S>({perceptual, l1, gan, feat}, {S(w[5]), S(w[6]), S(w[7]), S(w[8])});
}

}  // namespace bvton::losses
