#pragma once

#include "bvton/ops.hpp"
#include "bvton/random.hpp"

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace bvton::nn {

/// Named learnable tensors plus the architecture descriptor that fixes their shapes.
template <typename S>
class ParamStore {
 public:
  explicit ParamStore(std::string descriptor = {}) : descriptor_(std::move(descriptor)) {}

  Var<S> add(const std::string& name, Tensor<S> init) {
    require(index_.find(name) == index_.end(), "ParamStore: duplicate parameter " + name);
    Var<S> v(std::move(init), true);
    index_[name] = params_.size();
    params_.emplace_back(name, v);
    return v;
  }

  Var<S> get(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), "ParamStore: unknown parameter " + name);
    return params_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::pair<std::string, Var<S>>>& items() const { return params_; }
  std::vector<Var<S>> vars() const {
    std::vector<Var<S>> out;
    out.reserve(params_.size());
    for (const auto& [_, v] : params_) out.push_back(v);
    return out;
  }
  std::size_t count() const {
    std::size_t total = 0;
    for (const auto& [_, v] : params_) total += static_cast<std::size_t>(v.value().size());
    return total;
  }

  const std::string& descriptor() const { return descriptor_; }
  void set_descriptor(std::string d) { descriptor_ = std::move(d); }

  void zero_grad() {
    for (auto& [_, v] : params_) v.zero_grad();
  }

 private:
  std::string descriptor_;
  std::vector<std::pair<std::string, Var<S>>> params_;
  std::map<std::string, std::size_t> index_;
};

template <typename S>
Tensor<S> normal_tensor(Shape s, double stddev, Rng& rng) {
  Tensor<S> t(s);
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.normal() * stddev);
  return t;
}

enum class Init { He, Zero };

template <typename S>
struct Conv2d {
  Var<S> weight;
  Var<S> bias;
  int stride = 1;
  int pad = 0;

  Var<S> operator()(const Var<S>& x) const { return conv2d(x, weight, bias, stride, pad); }
  int out_channels() const { return weight.shape().n; }
};

/// "same"-padded conv for odd kernels unless stride > 1.
template <typename S>
Conv2d<S> make_conv(ParamStore<S>& store, const std::string& name, int in, int out, int k, int stride,
                    Rng& rng, Init init = Init::He, S bias_init = S(0), double gain = 1.0) {
  const double stddev = init == Init::Zero ? 0.0 : gain * std::sqrt(2.0 / (in * k * k));
  Conv2d<S> c;
  c.weight = store.add(name + ".weight", normal_tensor<S>(Shape{out, in, k, k}, stddev, rng));
  c.bias = store.add(name + ".bias", Tensor<S>(Shape{1, out, 1, 1}, bias_init));
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

template <typename S>
struct Linear {
  Var<S> weight;
  Var<S> bias;
  Var<S> operator()(const Var<S>& x) const { return linear(x, weight, bias); }
};

template <typename S>
Linear<S> make_linear(ParamStore<S>& store, const std::string& name, int in, int out, Rng& rng,
                      S bias_init = S(0), double gain = 1.0) {
  Linear<S> l;
  l.weight = store.add(name + ".weight", normal_tensor<S>(Shape{1, 1, out, in}, gain / std::sqrt(in), rng));
  l.bias = store.add(name + ".bias", Tensor<S>(Shape{1, out, 1, 1}, bias_init));
  return l;
}

/// Style-modulated convolution with weight demodulation. The modulation
/// vector is an affine map of a per-sample style code.
template <typename S>
struct ModConv2d {
  Conv2d<S> conv;
  Linear<S> modulation;

  Var<S> operator()(const Var<S>& x, const Var<S>& style_code) const {
    const Var<S> s = modulation(style_code);  // (N, Ci, 1, 1)
    const Var<S> y = conv2d(mul(x, s), conv.weight, Var<S>{}, conv.stride, conv.pad);
    return add(mul(y, demod_factor(conv.weight, s)), conv.bias);
  }
};

template <typename S>
ModConv2d<S> make_modconv(ParamStore<S>& store, const std::string& name, int in, int out, int k,
                          int style_dim, Rng& rng) {
  ModConv2d<S> m;
  m.conv = make_conv(store, name, in, out, k, 1, rng);
  m.modulation = make_linear(store, name + ".mod", style_dim, in, rng, S(1));
  return m;
}

/// Adam with bias correction.
template <typename S>
class Adam {
 public:
  Adam(std::vector<Var<S>> params, double lr, double beta1, double beta2, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.shape());
      v_.emplace_back(p.shape());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const S lr_t = static_cast<S>(lr_ * std::sqrt(c2) / c1);
    const S b1 = static_cast<S>(b1_), b2 = static_cast<S>(b2_);
    const S eps = static_cast<S>(eps_ * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.node()->has_grad()) continue;
      const auto& g = p.grad().array();
      auto& m = m_[i].array();
      auto& v = v_[i].array();
      m = b1 * m + (S(1) - b1) * g;
      v = b2 * v + (S(1) - b2) * g * g;
      p.mutable_value().array() -= lr_t * m / (v.sqrt() + eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  std::vector<Var<S>> params_;
  std::vector<Tensor<S>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace bvton::nn
