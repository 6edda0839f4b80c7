#pragma once

// Learnable building blocks shared by the pipeline stages.

#include "bvton/nn.hpp"
#include "bvton/warp.hpp"

#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace bvton::blocks {

using nn::Conv2d;
using nn::Init;
using nn::Linear;
using nn::ModConv2d;
using nn::ParamStore;

// ---------------------------------------------------------------- flow estimator

struct FlowConfig {
  int in_channels = 3;
  int levels = 4;
  std::vector<int> widths{8, 16, 32, 32};
  int style_dim = 32;
  bool coords = true;  // append normalized x/y channels to the conditioning

  std::string descriptor() const {
    std::ostringstream os;
    os << "flow(in=" << in_channels << ",L=" << levels << ",w=";
    for (std::size_t i = 0; i < widths.size(); ++i) os << (i ? "," : "") << widths[i];
    os << ",style=" << style_dim << ",coords=" << coords << ")";
    return os.str();
  }
};

template <typename S>
Tensor<S> coordinate_channels(int n, int h, int w) {
  Tensor<S> t(Shape{n, 2, h, w});
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        t(b, 0, y, x) = static_cast<S>(w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0);
        t(b, 1, y, x) = static_cast<S>(h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0);
      }
  return t;
}

/// Coarse-to-fine appearance-flow estimator. Each pyramid level upsamples the
/// coarser flow (x2 in size and magnitude) and adds a residual predicted by a
/// style-modulated head.
template <typename S>
class FlowEstimator {
 public:
  FlowEstimator() = default;
  FlowEstimator(ParamStore<S>& store, const std::string& prefix, FlowConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    require(cfg_.levels >= 1 && static_cast<int>(cfg_.widths.size()) == cfg_.levels,
            "FlowEstimator: widths must list one entry per level");
    const auto& w = cfg_.widths;
    const int in = cfg_.in_channels + (cfg_.coords ? 2 : 0);
    enc_.push_back(nn::make_conv(store, prefix + ".enc0", in, w[0], 3, 1, rng));
    for (int i = 1; i < cfg_.levels; ++i) {
      down_.push_back(nn::make_conv(store, prefix + ".down" + std::to_string(i), w[i - 1], w[i], 3, 2, rng));
      enc_.push_back(nn::make_conv(store, prefix + ".enc" + std::to_string(i), w[i], w[i], 3, 1, rng));
    }
    style_ = nn::make_linear(store, prefix + ".style", w.back(), cfg_.style_dim, rng);
    for (int l = 0; l < cfg_.levels; ++l) {
      const int feat = w[cfg_.levels - 1 - l];
      const int hin = feat + (l == 0 ? 0 : 2);
      const std::string name = prefix + ".head" + std::to_string(l);
      head_.push_back(nn::make_modconv(store, name, hin, feat, 3, cfg_.style_dim, rng));
      out_.push_back(nn::make_conv(store, name + ".out", feat, 2, 3, 1, rng, Init::Zero));
    }
  }

  const FlowConfig& config() const { return cfg_; }

  /// Flow pyramid from coarsest to finest; the last entry has input resolution.
  std::vector<Var<S>> forward(const Var<S>& cond) const {
    const Shape s = cond.shape();
    require(s.c == cfg_.in_channels, "FlowEstimator: expected " + std::to_string(cfg_.in_channels) +
                                         " conditioning channels, got " + std::to_string(s.c));
    const int f = 1 << (cfg_.levels - 1);
    require(s.h % f == 0 && s.w % f == 0,
            "FlowEstimator: resolution " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                " not divisible by " + std::to_string(f));
    Var<S> x = cfg_.coords ? concat_channels<S>({cond, constant(coordinate_channels<S>(s.n, s.h, s.w))}) : cond;
    std::vector<Var<S>> feats;
    x = leaky_relu(enc_[0](x));
    feats.push_back(x);
    for (int i = 1; i < cfg_.levels; ++i) {
      x = leaky_relu(down_[i - 1](x));
      x = leaky_relu(enc_[i](x));
      feats.push_back(x);
    }
    const Var<S> code = leaky_relu(style_(global_avg_pool(x)));

    std::vector<Var<S>> flows;
    Var<S> flow;
    for (int l = 0; l < cfg_.levels; ++l) {
      const Var<S>& feat = feats[cfg_.levels - 1 - l];
      Var<S> up;
      Var<S> in = feat;
      if (l > 0) {
        up = affine(upsample2(flow), S(2));
        in = concat_channels<S>({feat, up});
      }
      const Var<S> residual = out_[l](leaky_relu(head_[l](in, code)));
      flow = l == 0 ? residual : add(up, residual);
      flows.push_back(flow);
    }
    return flows;
  }

 private:
  FlowConfig cfg_;
  std::vector<Conv2d<S>> enc_, down_;
  Linear<S> style_;
  std::vector<ModConv2d<S>> head_;
  std::vector<Conv2d<S>> out_;
};

// ---------------------------------------------------------------- tri-level block

/// Local gating masks sigma(conv(F_S)) for the clothes and pose streams.
template <typename S>
std::pair<Var<S>, Var<S>> gating_masks(const Var<S>& parsing, const Conv2d<S>& conv_c, const Conv2d<S>& conv_p) {
  return {sigmoid(conv_c(parsing)), sigmoid(conv_p(parsing))};
}

/// M(u, v) = cosine of channel-centred a_u and b_v, rows (N,1,R,K) each.
template <typename S>
Var<S> correlation_matrix(const Var<S>& a_rows, const Var<S>& b_rows) {
  return bmm_nt(center_normalize_rows(a_rows), center_normalize_rows(b_rows));
}

/// softmax_v(alpha M) x: each output row is a convex combination of rows of x.
template <typename S>
Var<S> attention_transform(const Var<S>& corr, const Var<S>& x_rows, S alpha) {
  require(alpha > S(0), "attention_transform: alpha must be positive");
  return bmm(softmax_rows(corr, alpha), x_rows);
}

template <typename S>
struct TriLevelOutput {
  Var<S> clothes, pose, parsing;
  Var<S> correlation;  // rows index pose positions, columns clothes positions
};

template <typename S>
class TriLevelBlock {
 public:
  TriLevelBlock() = default;
  TriLevelBlock(ParamStore<S>& store, const std::string& prefix, int channels, Rng& rng, S alpha = S(100))
      : alpha_(alpha) {
    gate_c_ = nn::make_conv(store, prefix + ".gate_c", channels, channels, 3, 1, rng);
    gate_p_ = nn::make_conv(store, prefix + ".gate_p", channels, channels, 3, 1, rng);
    conv_c_ = nn::make_conv(store, prefix + ".conv_c", channels, channels, 3, 1, rng);
    conv_p_ = nn::make_conv(store, prefix + ".conv_p", channels, channels, 3, 1, rng);
    gamma_ = nn::make_conv(store, prefix + ".gamma", channels, channels, 3, 1, rng, Init::He, S(1), 0.1);
    beta_ = nn::make_conv(store, prefix + ".beta", channels, channels, 3, 1, rng, Init::He, S(0), 0.1);
  }

  TriLevelOutput<S> forward(const Var<S>& fc, const Var<S>& fp, const Var<S>& fs) const {
    const Shape s = fc.shape();
    require(fp.shape() == s && fs.shape() == s, "TriLevelBlock: streams must share shape");
    auto [mc, mp] = gating_masks(fs, gate_c_, gate_p_);
    const Var<S> xc = to_rows(fc);
    const Var<S> corr = correlation_matrix(to_rows(fp), xc);
    const Var<S> warped = from_rows(attention_transform(corr, xc, alpha_), s.h, s.w);
    TriLevelOutput<S> out;
    out.clothes = add(mul(mc, conv_c_(fc)), fc);
    out.pose = add(mul(mp, conv_p_(fp)), fp);
    out.parsing = add(mul(gamma_(warped), fs), beta_(warped));
    out.correlation = corr;
    return out;
  }

  S alpha() const { return alpha_; }

 private:
  S alpha_ = S(100);
  Conv2d<S> gate_c_, gate_p_, conv_c_, conv_p_, gamma_, beta_;
};

// ---------------------------------------------------------------- SPADE / MaskNorm

/// Conditioning for SPADE blocks at one feature resolution.
template <typename S>
struct SpadeCondition {
  Tensor<S> layout;  // (N, K, h, w) layout with degenerated clothes channel
  Tensor<S> mask;    // (N, 1, h, w) degenerated clothes mask, binary
};

/// Area-resize the layout and re-binarize the mask at the given resolution.
template <typename S>
SpadeCondition<S> resize_condition(const Tensor<S>& layout, const Tensor<S>& mask, int h, int w) {
  SpadeCondition<S> c;
  c.layout = (layout.h() == h && layout.w() == w) ? layout : warp::area_resize(layout, h, w);
  c.mask = (mask.h() == h && mask.w() == w) ? mask : warp::binarize(warp::area_resize(mask, h, w));
  return c;
}

/// MaskNorm standardization (inside vs. outside the mask) followed by the
/// spatially varying gamma(S') * x + beta(S') modulation.
template <typename S>
class SpadeMaskNorm {
 public:
  SpadeMaskNorm() = default;
  SpadeMaskNorm(ParamStore<S>& store, const std::string& prefix, int channels, int cond_channels, int hidden,
                Rng& rng) {
    shared_ = nn::make_conv(store, prefix + ".shared", cond_channels + 1, hidden, 3, 1, rng);
    gamma_ = nn::make_conv(store, prefix + ".gamma", hidden, channels, 3, 1, rng, Init::He, S(1), 0.1);
    beta_ = nn::make_conv(store, prefix + ".beta", hidden, channels, 3, 1, rng, Init::He, S(0), 0.1);
  }

  Var<S> forward(const Var<S>& h, const SpadeCondition<S>& cond) const {
    require(cond.layout.h() == h.shape().h && cond.layout.w() == h.shape().w,
            "SpadeMaskNorm: condition resolution does not match activation");
    const Var<S> normalized = masknorm(h, cond.mask);
    const Var<S> c = constant(concat_tensors(cond.layout, cond.mask));
    const Var<S> a = leaky_relu(shared_(c));
    return add(mul(normalized, gamma_(a)), beta_(a));
  }

 private:
  static Tensor<S> concat_tensors(const Tensor<S>& a, const Tensor<S>& b) {
    NoGradGuard guard;
    return concat_channels<S>({constant(a), constant(b)}).value();
  }
  Conv2d<S> shared_, gamma_, beta_;
};

/// Residual block: two SPADE-normalized convolutions plus a learned shortcut
/// when the width changes.
template <typename S>
class SpadeResBlock {
 public:
  SpadeResBlock() = default;
  SpadeResBlock(ParamStore<S>& store, const std::string& prefix, int in, int out, int cond_channels, Rng& rng) {
    const int mid = std::min(in, out);
    const int hidden = std::max(8, std::min(32, out));
    norm0_ = SpadeMaskNorm<S>(store, prefix + ".norm0", in, cond_channels, hidden, rng);
    conv0_ = nn::make_conv(store, prefix + ".conv0", in, mid, 3, 1, rng);
    norm1_ = SpadeMaskNorm<S>(store, prefix + ".norm1", mid, cond_channels, hidden, rng);
    conv1_ = nn::make_conv(store, prefix + ".conv1", mid, out, 3, 1, rng, Init::He, S(0), 0.5);
    if (in != out) {
      has_skip_ = true;
      norm_s_ = SpadeMaskNorm<S>(store, prefix + ".norm_s", in, cond_channels, hidden, rng);
      skip_ = nn::make_conv(store, prefix + ".skip", in, out, 1, 1, rng);
    }
  }

  Var<S> forward(const Var<S>& x, const SpadeCondition<S>& cond) const {
    Var<S> h = conv0_(leaky_relu(norm0_.forward(x, cond)));
    h = conv1_(leaky_relu(norm1_.forward(h, cond)));
    const Var<S> s = has_skip_ ? skip_(norm_s_.forward(x, cond)) : x;
    return add(s, h);
  }

 private:
  SpadeMaskNorm<S> norm0_, norm1_, norm_s_;
  Conv2d<S> conv0_, conv1_, skip_;
  bool has_skip_ = false;
};

// ---------------------------------------------------------------- gumbel

/// softmax((logits + g) / tau) with g ~ Gumbel(0,1) per entry. The hard variant
/// returns the straight-through one-hot sample.
template <typename S>
Var<S> gumbel_softmax(const Var<S>& logits, double tau, Rng& rng, bool hard = false) {
  require(tau > 0.0, "gumbel_softmax: temperature must be positive");
  Tensor<S> noise(logits.shape());
  for (Eigen::Index i = 0; i < noise.size(); ++i) noise[i] = static_cast<S>(rng.gumbel());
  const Var<S> soft = softmax_channels(add(logits, constant(noise)), static_cast<S>(1.0 / tau));
  return hard ? straight_through_onehot(soft) : soft;
}

// ---------------------------------------------------------------- discriminator

template <typename S>
struct DiscriminatorOutput {
  std::vector<Var<S>> scores;                 // one map per scale
  std::vector<std::vector<Var<S>>> features;  // per scale, one entry per strided layer
};

/// Two-scale patch discriminator; each scale has `depth` stride-2 layers and a
/// 3x3 score head, so score maps are input / 2^depth.
template <typename S>
class PatchDiscriminator {
 public:
  PatchDiscriminator() = default;
  PatchDiscriminator(ParamStore<S>& store, const std::string& prefix, int in_channels, Rng& rng, int depth = 2,
                     int base = 16, int scales = 2)
      : depth_(depth) {
    for (int sc = 0; sc < scales; ++sc) {
      std::vector<Conv2d<S>> layers;
      int c = in_channels;
      for (int d = 0; d < depth; ++d) {
        const int o = base << d;
        layers.push_back(nn::make_conv(store, prefix + ".s" + std::to_string(sc) + ".l" + std::to_string(d), c, o, 3,
                                       2, rng));
        c = o;
      }
      layers_.push_back(layers);
      heads_.push_back(nn::make_conv(store, prefix + ".s" + std::to_string(sc) + ".score", c, 1, 3, 1, rng));
    }
  }

  DiscriminatorOutput<S> forward(const Var<S>& image, const Var<S>& condition) const {
    DiscriminatorOutput<S> out;
    Var<S> x = concat_channels<S>({image, condition});
    for (std::size_t sc = 0; sc < layers_.size(); ++sc) {
      if (sc > 0) x = avg_pool2(x);
      Var<S> h = x;
      std::vector<Var<S>> feats;
      for (const auto& layer : layers_[sc]) {
        h = leaky_relu(layer(h));
        feats.push_back(h);
      }
      out.scores.push_back(heads_[sc](h));
      out.features.push_back(feats);
    }
    return out;
  }

  int depth() const { return depth_; }
  int scales() const { return static_cast<int>(layers_.size()); }

 private:
  int depth_ = 2;
  std::vector<std::vector<Conv2d<S>>> layers_;
  std::vector<Conv2d<S>> heads_;
};

// ---------------------------------------------------------------- fixed features

inline constexpr const char* kFeatureExtractorVersion = "randconv-16-32-64/seed0/v1";

/// Frozen three-stage strided conv stack (16/32/64 channels) with weights drawn
/// from a fixed seed; used for perceptual losses and feature distances.
template <typename S>
class FeatureExtractor {
 public:
  explicit FeatureExtractor(std::uint64_t seed = 0) : store_(kFeatureExtractorVersion) {
    Rng rng(seed);
    const int widths[3] = {16, 32, 64};
    int c = 3;
    for (int i = 0; i < 3; ++i) {
      stages_.push_back(nn::make_conv(store_, "feat" + std::to_string(i), c, widths[i], 3, 2, rng));
      c = widths[i];
    }
    // frozen: weights never enter an optimizer and never accumulate gradients
    for (auto& [_, v] : store_.items()) v.node()->requires_grad = false;
  }

  /// Features of a model-range image; gradients flow to the image only.
  std::vector<Var<S>> forward(const Var<S>& image) const {
    require(image.shape().c == 3, "FeatureExtractor: expects 3-channel images");
    std::vector<Var<S>> feats;
    Var<S> x = image;
    for (const auto& st : stages_) {
      x = relu(st(x));
      feats.push_back(x);
    }
    return feats;
  }

  const ParamStore<S>& params() const { return store_; }

 private:
  ParamStore<S> store_;
  std::vector<Conv2d<S>> stages_;
};

}  // namespace bvton::blocks
