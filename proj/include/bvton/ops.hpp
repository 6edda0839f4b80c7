#pragma once

#include "bvton/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace bvton {

namespace detail {

inline bool broadcastable(const Shape& a, const Shape& b) {
  auto ok = [](int x, int y) { return y == x || y == 1; };
  return ok(a.n, b.n) && ok(a.c, b.c) && ok(a.h, b.h) && ok(a.w, b.w);
}

/// Calls f(ia, ib) for every element of `a`, where ib indexes `b` broadcast to `a`.
template <typename F>
void for_each_bcast(const Shape& a, const Shape& b, F&& f) {
  const Eigen::Index sw = b.w == 1 ? 0 : 1;
  const Eigen::Index sh = b.h == 1 ? 0 : b.w;
  const Eigen::Index sc = b.c == 1 ? 0 : static_cast<Eigen::Index>(b.h) * b.w;
  const Eigen::Index sn = b.n == 1 ? 0 : static_cast<Eigen::Index>(b.c) * b.h * b.w;
  Eigen::Index ia = 0;
  for (int n = 0; n < a.n; ++n)
    for (int c = 0; c < a.c; ++c)
      for (int y = 0; y < a.h; ++y) {
        const Eigen::Index base = n * sn + c * sc + y * sh;
        for (int x = 0; x < a.w; ++x) f(ia++, base + x * sw);
      }
}

template <typename S, typename Fwd, typename Grad>
Var<S> unary(const Var<S>& x, Fwd fwd, Grad dfdx) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array().unaryExpr(fwd);
  return make_result<S>(std::move(out), {x}, [x, dfdx](Node<S>& self) {
    if (auto* gx = x.grad_sink()) {
      const auto& xv = x.value().array();
      const auto& yv = self.value.array();
      for (Eigen::Index i = 0; i < xv.size(); ++i) (*gx)[i] += self.grad[i] * dfdx(xv[i], yv[i]);
    }
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

/// a + b, with b broadcast over any of its unit dimensions.
template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  require(detail::broadcastable(a.shape(), b.shape()),
          "add: cannot broadcast " + b.shape().str() + " to " + a.shape().str());
  Tensor<S> out = a.value();
  if (a.shape() == b.shape()) {
    out.array() += b.value().array();
  } else {
    const auto& bv = b.value();
    detail::for_each_bcast(a.shape(), b.shape(), [&](Eigen::Index i, Eigen::Index j) { out[i] += bv[j]; });
  }
  return make_result<S>(std::move(out), {a, b}, [a, b](Node<S>& self) {
    if (auto* ga = a.grad_sink()) ga->array() += self.grad.array();
    if (auto* gb = b.grad_sink()) {
      if (a.shape() == b.shape()) {
        gb->array() += self.grad.array();
      } else {
        detail::for_each_bcast(a.shape(), b.shape(),
                               [&](Eigen::Index i, Eigen::Index j) { (*gb)[j] += self.grad[i]; });
      }
    }
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  require(a.shape() == b.shape(), "sub: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<S> out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return make_result<S>(std::move(out), {a, b}, [a, b](Node<S>& self) {
    if (auto* ga = a.grad_sink()) ga->array() += self.grad.array();
    if (auto* gb = b.grad_sink()) gb->array() -= self.grad.array();
  });
}

/// a * b elementwise, with b broadcast over any of its unit dimensions.
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  require(detail::broadcastable(a.shape(), b.shape()),
          "mul: cannot broadcast " + b.shape().str() + " to " + a.shape().str());
  Tensor<S> out(a.shape());
  const bool same = a.shape() == b.shape();
  if (same) {
    out.array() = a.value().array() * b.value().array();
  } else {
    const auto& av = a.value();
    const auto& bv = b.value();
    detail::for_each_bcast(a.shape(), b.shape(), [&](Eigen::Index i, Eigen::Index j) { out[i] = av[i] * bv[j]; });
  }
  return make_result<S>(std::move(out), {a, b}, [a, b, same](Node<S>& self) {
    const auto& av = a.value();
    const auto& bv = b.value();
    auto* ga = a.grad_sink();
    auto* gb = b.grad_sink();
    if (same) {
      if (ga) ga->array() += self.grad.array() * bv.array();
      if (gb) gb->array() += self.grad.array() * av.array();
      return;
    }
    detail::for_each_bcast(a.shape(), b.shape(), [&](Eigen::Index i, Eigen::Index j) {
      if (ga) (*ga)[i] += self.grad[i] * bv[j];
      if (gb) (*gb)[j] += self.grad[i] * av[i];
    });
  });
}

template <typename S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <typename S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <typename S>
Var<S> operator*(const Var<S>& a, const Var<S>& b) { return mul(a, b); }

/// k * x + offset.
template <typename S>
Var<S> affine(const Var<S>& x, S k, S offset = S(0)) {
  Tensor<S> out(x.shape());
  out.array() = x.value().array() * k + offset;
  return make_result<S>(std::move(out), {x}, [x, k](Node<S>& self) {
    if (auto* gx = x.grad_sink()) gx->array() += self.grad.array() * k;
  });
}

template <typename S>
Var<S> operator*(const Var<S>& x, S k) { return affine(x, k); }
template <typename S>
Var<S> operator*(S k, const Var<S>& x) { return affine(x, k); }
template <typename S>
Var<S> operator+(const Var<S>& x, S k) { return affine(x, S(1), k); }
template <typename S>
Var<S> operator-(S k, const Var<S>& x) { return affine(x, S(-1), k); }

template <typename S>
Var<S> leaky_relu(const Var<S>& x, S slope = S(0.2)) {
  return detail::unary<S>(
      x, [slope](S v) { return v > S(0) ? v : slope * v; },
      [slope](S v, S) { return v > S(0) ? S(1) : slope; });
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  return leaky_relu(x, S(0));
}

template <typename S>
Var<S> sigmoid(const Var<S>& x) {
  return detail::unary<S>(
      x, [](S v) { return S(1) / (S(1) + std::exp(-v)); }, [](S, S y) { return y * (S(1) - y); });
}

template <typename S>
Var<S> tanh(const Var<S>& x) {
  return detail::unary<S>(
      x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}

template <typename S>
Var<S> abs(const Var<S>& x) {
  return detail::unary<S>(
      x, [](S v) { return std::abs(v); },
      [](S v, S) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
}

template <typename S>
Var<S> square(const Var<S>& x) {
  return detail::unary<S>(
      x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}

// ---------------------------------------------------------------- reductions

template <typename S>
Var<S> sum(const Var<S>& x) {
  Tensor<S> out(Shape{1, 1, 1, 1}, x.value().array().sum());
  return make_result<S>(std::move(out), {x}, [x](Node<S>& self) {
    if (auto* gx = x.grad_sink()) gx->array() += self.grad[0];
  });
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  const S inv = S(1) / static_cast<S>(x.value().size());
  Tensor<S> out(Shape{1, 1, 1, 1}, x.value().array().sum() * inv);
  return make_result<S>(std::move(out), {x}, [x, inv](Node<S>& self) {
    if (auto* gx = x.grad_sink()) gx->array() += self.grad[0] * inv;
  });
}

/// Sum of scalar Vars with weights.
template <typename S>
Var<S> weighted_sum(const std::vector<Var<S>>& terms, const std::vector<S>& weights) {
  require(terms.size() == weights.size() && !terms.empty(), "weighted_sum: size mismatch");
  S total = S(0);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().size() == 1, "weighted_sum: terms must be scalars");
    total += weights[i] * terms[i].value()[0];
  }
  return make_result<S>(Tensor<S>(Shape{1, 1, 1, 1}, total), terms, [terms, weights](Node<S>& self) {
    for (std::size_t i = 0; i < terms.size(); ++i)
      if (auto* g = terms[i].grad_sink()) (*g)[0] += self.grad[0] * weights[i];
  });
}

/// Global average pool to (N,C,1,1).
template <typename S>
Var<S> global_avg_pool(const Var<S>& x) {
  const Shape s = x.shape();
  Tensor<S> out(Shape{s.n, s.c, 1, 1});
  const S inv = S(1) / static_cast<S>(s.plane());
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* p = x.value().plane(n, c);
      out(n, c, 0, 0) = std::accumulate(p, p + s.plane(), S(0)) * inv;
    }
  return make_result<S>(std::move(out), {x}, [x, inv](Node<S>& self) {
    if (auto* gx = x.grad_sink()) {
      const Shape s = x.shape();
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          S* p = gx->plane(n, c);
          const S g = self.grad(n, c, 0, 0) * inv;
          for (Eigen::Index i = 0; i < s.plane(); ++i) p[i] += g;
        }
    }
  });
}

// ---------------------------------------------------------------- channels

template <typename S>
Var<S> concat_channels(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_channels: empty input");
  Shape s = parts.front().shape();
  s.c = 0;
  for (const auto& p : parts) {
    require(p.shape().n == s.n && p.shape().h == s.h && p.shape().w == s.w,
            "concat_channels: spatial/batch mismatch " + p.shape().str());
    s.c += p.shape().c;
  }
  Tensor<S> out(s);
  for (int n = 0; n < s.n; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      const Eigen::Index len = static_cast<Eigen::Index>(p.shape().c) * s.plane();
      std::copy(p.value().plane(n, 0), p.value().plane(n, 0) + len, out.plane(n, c0));
      c0 += p.shape().c;
    }
  }
  return make_result<S>(std::move(out), parts, [parts](Node<S>& self) {
    const Shape s = self.value.shape();
    for (int n = 0; n < s.n; ++n) {
      int c0 = 0;
      for (const auto& p : parts) {
        const Eigen::Index len = static_cast<Eigen::Index>(p.shape().c) * s.plane();
        if (auto* g = p.grad_sink()) {
          const S* src = self.grad.plane(n, c0);
          S* dst = g->plane(n, 0);
          for (Eigen::Index i = 0; i < len; ++i) dst[i] += src[i];
        }
        c0 += p.shape().c;
      }
    }
  });
}

/// Channels [c0, c1).
template <typename S>
Var<S> slice_channels(const Var<S>& x, int c0, int c1) {
  const Shape s = x.shape();
  require(0 <= c0 && c0 < c1 && c1 <= s.c, "slice_channels: bad range");
  Tensor<S> out(Shape{s.n, c1 - c0, s.h, s.w});
  const Eigen::Index len = static_cast<Eigen::Index>(c1 - c0) * s.plane();
  for (int n = 0; n < s.n; ++n)
    std::copy(x.value().plane(n, c0), x.value().plane(n, c0) + len, out.plane(n, 0));
  return make_result<S>(std::move(out), {x}, [x, c0, len](Node<S>& self) {
    if (auto* g = x.grad_sink()) {
      for (int n = 0; n < self.value.n(); ++n) {
        const S* src = self.grad.plane(n, 0);
        S* dst = g->plane(n, c0);
        for (Eigen::Index i = 0; i < len; ++i) dst[i] += src[i];
      }
    }
  });
}

/// Per-pixel softmax over channels.
template <typename S>
Var<S> softmax_channels(const Var<S>& x, S scale = S(1)) {
  const Shape s = x.shape();
  Tensor<S> out(s);
  const auto& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (Eigen::Index p = 0; p < s.plane(); ++p) {
      S mx = -std::numeric_limits<S>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, scale * xv.plane(n, c)[p]);
      S z = 0;
      for (int c = 0; c < s.c; ++c) {
        const S e = std::exp(scale * xv.plane(n, c)[p] - mx);
        out.plane(n, c)[p] = e;
        z += e;
      }
      for (int c = 0; c < s.c; ++c) out.plane(n, c)[p] /= z;
    }
  return make_result<S>(std::move(out), {x}, [x, scale](Node<S>& self) {
    if (auto* g = x.grad_sink()) {
      const Shape s = self.value.shape();
      for (int n = 0; n < s.n; ++n)
        for (Eigen::Index p = 0; p < s.plane(); ++p) {
          S dot = 0;
          for (int c = 0; c < s.c; ++c) dot += self.grad.plane(n, c)[p] * self.value.plane(n, c)[p];
          for (int c = 0; c < s.c; ++c)
            g->plane(n, c)[p] += scale * self.value.plane(n, c)[p] * (self.grad.plane(n, c)[p] - dot);
        }
    }
  });
}

template <typename S>
Var<S> log_softmax_channels(const Var<S>& x) {
  const Shape s = x.shape();
  Tensor<S> out(s);
  const auto& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (Eigen::Index p = 0; p < s.plane(); ++p) {
      S mx = -std::numeric_limits<S>::infinity();
      for (int c = 0; c < s.c; ++c) mx = std::max(mx, xv.plane(n, c)[p]);
      S z = 0;
      for (int c = 0; c < s.c; ++c) z += std::exp(xv.plane(n, c)[p] - mx);
      const S lse = mx + std::log(z);
      for (int c = 0; c < s.c; ++c) out.plane(n, c)[p] = xv.plane(n, c)[p] - lse;
    }
  return make_result<S>(std::move(out), {x}, [x](Node<S>& self) {
    if (auto* g = x.grad_sink()) {
      const Shape s = self.value.shape();
      for (int n = 0; n < s.n; ++n)
        for (Eigen::Index p = 0; p < s.plane(); ++p) {
          S gs = 0;
          for (int c = 0; c < s.c; ++c) gs += self.grad.plane(n, c)[p];
          for (int c = 0; c < s.c; ++c)
            g->plane(n, c)[p] += self.grad.plane(n, c)[p] - std::exp(self.value.plane(n, c)[p]) * gs;
        }
    }
  });
}

/// Forward: one-hot of the per-pixel argmax channel. Backward: identity.
template <typename S>
Var<S> straight_through_onehot(const Var<S>& soft) {
  const Shape s = soft.shape();
  Tensor<S> out(s);
  for (int n = 0; n < s.n; ++n)
    for (Eigen::Index p = 0; p < s.plane(); ++p) {
      int best = 0;
      for (int c = 1; c < s.c; ++c)
        if (soft.value().plane(n, c)[p] > soft.value().plane(n, best)[p]) best = c;
      out.plane(n, best)[p] = S(1);
    }
  return make_result<S>(std::move(out), {soft}, [soft](Node<S>& self) {
    if (auto* g = soft.grad_sink()) g->array() += self.grad.array();
  });
}

// ---------------------------------------------------------------- convolution

namespace detail {

template <typename S>
void im2col(const S* img, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, S* cols) {
  const Eigen::Index P = static_cast<Eigen::Index>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        S* row = cols + ((static_cast<Eigen::Index>(c) * k + i) * k + j) * P;
        const S* src = img + static_cast<Eigen::Index>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          const int y = oy * stride - pad + i;
          S* r = row + static_cast<Eigen::Index>(oy) * Wo;
          if (y < 0 || y >= H) {
            std::fill(r, r + Wo, S(0));
            continue;
          }
          const S* line = src + static_cast<Eigen::Index>(y) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int x = ox * stride - pad + j;
            r[ox] = (x >= 0 && x < W) ? line[x] : S(0);
          }
        }
      }
}

template <typename S>
void col2im(const S* cols, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, S* img) {
  const Eigen::Index P = static_cast<Eigen::Index>(Ho) * Wo;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) {
        const S* row = cols + ((static_cast<Eigen::Index>(c) * k + i) * k + j) * P;
        S* dst = img + static_cast<Eigen::Index>(c) * H * W;
        for (int oy = 0; oy < Ho; ++oy) {
          const int y = oy * stride - pad + i;
          if (y < 0 || y >= H) continue;
          const S* r = row + static_cast<Eigen::Index>(oy) * Wo;
          S* line = dst + static_cast<Eigen::Index>(y) * W;
          for (int ox = 0; ox < Wo; ++ox) {
            const int x = ox * stride - pad + j;
            if (x >= 0 && x < W) line[x] += r[ox];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution (cross-correlation). w: (Co,Ci,k,k); bias: (1,Co,1,1) or undefined.
template <typename S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& bias, int stride = 1, int pad = 0) {
  using Mat = typename Tensor<S>::RowMatrix;
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  require(ws.c == xs.c, "conv2d: input channels " + std::to_string(xs.c) + " vs weight " + ws.str());
  require(ws.h == ws.w, "conv2d: square kernels only");
  const int k = ws.h;
  const int Ho = (xs.h + 2 * pad - k) / stride + 1;
  const int Wo = (xs.w + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d: output would be empty");
  const int Co = ws.n;
  const Eigen::Index K = static_cast<Eigen::Index>(xs.c) * k * k;
  const Eigen::Index P = static_cast<Eigen::Index>(Ho) * Wo;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor<S> out(Shape{xs.n, Co, Ho, Wo});
  typename Tensor<S>::ConstMatrixMap Wm(w.value().data(), Co, K);
  Mat cols;
  if (!pointwise) cols.resize(K, P);
  for (int n = 0; n < xs.n; ++n) {
    auto o = out.sample_matrix(n);
    if (pointwise) {
      o.noalias() = Wm * x.value().sample_matrix(n);
    } else {
      detail::im2col(x.value().plane(n, 0), xs.c, xs.h, xs.w, k, stride, pad, Ho, Wo, cols.data());
      o.noalias() = Wm * cols;
    }
    if (bias.defined()) {
      for (int co = 0; co < Co; ++co) o.row(co).array() += bias.value()[co];
    }
  }
  std::vector<Var<S>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result<S>(std::move(out), parents,
                        [x, w, bias, stride, pad, k, Ho, Wo, Co, K, P, pointwise](Node<S>& self) {
    const Shape xs = x.shape();
    auto* gx = x.grad_sink();
    auto* gw = w.grad_sink();
    auto* gb = bias.defined() ? bias.grad_sink() : nullptr;
    typename Tensor<S>::ConstMatrixMap Wm(w.value().data(), Co, K);
    Mat cols;
    Mat dcols;
    Mat dW;
    if (gw) dW = Mat::Zero(Co, K);
    if (!pointwise) cols.resize(K, P);
    for (int n = 0; n < xs.n; ++n) {
      auto go = self.grad.sample_matrix(n);
      if (gb) {
        for (int co = 0; co < Co; ++co) (*gb)[co] += go.row(co).sum();
      }
      if (gw) {
        if (pointwise) {
          dW.noalias() += go * x.value().sample_matrix(n).transpose();
        } else {
          detail::im2col(x.value().plane(n, 0), xs.c, xs.h, xs.w, k, stride, pad, Ho, Wo, cols.data());
          dW.noalias() += go * cols.transpose();
        }
      }
      if (gx) {
        if (pointwise) {
          gx->sample_matrix(n).noalias() += Wm.transpose() * go;
        } else {
          dcols.noalias() = Wm.transpose() * go;
          detail::col2im(dcols.data(), xs.c, xs.h, xs.w, k, stride, pad, Ho, Wo, gx->plane(n, 0));
        }
      }
    }
    if (gw) {
      typename Tensor<S>::MatrixMap gwm(gw->data(), Co, K);
      gwm += dW;
    }
  });
}

/// Dense layer on (N,F,1,1) inputs. w: (1,1,O,F); bias: (1,O,1,1) or undefined.
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& w, const Var<S>& bias) {
  const Shape xs = x.shape();
  const int F = xs.c * xs.h * xs.w;
  require(w.shape().w == F, "linear: feature mismatch");
  const int O = w.shape().h;
  Tensor<S> out(Shape{xs.n, O, 1, 1});
  typename Tensor<S>::ConstMatrixMap X(x.value().data(), xs.n, F);
  typename Tensor<S>::ConstMatrixMap Wm(w.value().data(), O, F);
  typename Tensor<S>::MatrixMap Y(out.data(), xs.n, O);
  Y.noalias() = X * Wm.transpose();
  if (bias.defined())
    for (int n = 0; n < xs.n; ++n)
      for (int o = 0; o < O; ++o) Y(n, o) += bias.value()[o];
  std::vector<Var<S>> parents{x, w};
  if (bias.defined()) parents.push_back(bias);
  return make_result<S>(std::move(out), parents, [x, w, bias, F, O](Node<S>& self) {
    const int N = x.shape().n;
    typename Tensor<S>::ConstMatrixMap G(self.grad.data(), N, O);
    if (auto* gx = x.grad_sink()) {
      typename Tensor<S>::ConstMatrixMap Wm(w.value().data(), O, F);
      typename Tensor<S>::MatrixMap GX(gx->data(), N, F);
      GX.noalias() += G * Wm;
    }
    if (auto* gw = w.grad_sink()) {
      typename Tensor<S>::ConstMatrixMap X(x.value().data(), N, F);
      typename Tensor<S>::MatrixMap GW(gw->data(), O, F);
      GW.noalias() += G.transpose() * X;
    }
    if (bias.defined())
      if (auto* gb = bias.grad_sink())
        for (int n = 0; n < N; ++n)
          for (int o = 0; o < O; ++o) (*gb)[o] += G(n, o);
  });
}

/// Per-sample demodulation factors 1/sqrt(sum_{i,k} (s_i w_{o,i,k})^2 + eps) as (N,Co,1,1).
template <typename S>
Var<S> demod_factor(const Var<S>& w, const Var<S>& style, S eps = S(1e-8)) {
  const Shape ws = w.shape();
  const Shape ss = style.shape();
  require(ss.c == ws.c && ss.h == 1 && ss.w == 1, "demod_factor: style must be (N,Ci,1,1)");
  const int Co = ws.n, Ci = ws.c, kk = ws.h * ws.w;
  Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> W2(Co, Ci);
  for (int o = 0; o < Co; ++o)
    for (int i = 0; i < Ci; ++i) {
      S acc = 0;
      const S* p = w.value().data() + (static_cast<Eigen::Index>(o) * Ci + i) * kk;
      for (int t = 0; t < kk; ++t) acc += p[t] * p[t];
      W2(o, i) = acc;
    }
  Tensor<S> out(Shape{ss.n, Co, 1, 1});
  for (int n = 0; n < ss.n; ++n)
    for (int o = 0; o < Co; ++o) {
      S q = eps;
      for (int i = 0; i < Ci; ++i) {
        const S s = style.value()(n, i, 0, 0);
        q += s * s * W2(o, i);
      }
      out(n, o, 0, 0) = S(1) / std::sqrt(q);
    }
  return make_result<S>(std::move(out), {w, style}, [w, style, W2, Co, Ci, kk](Node<S>& self) {
    const int N = style.shape().n;
    auto* gw = w.grad_sink();
    auto* gs = style.grad_sink();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < Co; ++o) {
        const S d = self.value(n, o, 0, 0);
        const S dq = self.grad(n, o, 0, 0) * S(-0.5) * d * d * d;
        for (int i = 0; i < Ci; ++i) {
          const S s = style.value()(n, i, 0, 0);
          if (gs) (*gs)(n, i, 0, 0) += dq * S(2) * s * W2(o, i);
          if (gw) {
            const Eigen::Index base = (static_cast<Eigen::Index>(o) * Ci + i) * kk;
            for (int t = 0; t < kk; ++t) (*gw)[base + t] += dq * S(2) * s * s * w.value()[base + t];
          }
        }
      }
  });
}

// ---------------------------------------------------------------- resampling

/// 2x2 mean pooling; spatial dims must be even.
template <typename S>
Var<S> avg_pool2(const Var<S>& x) {
  const Shape s = x.shape();
  require(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2: spatial dims must be even, got " + s.str());
  const int Ho = s.h / 2, Wo = s.w / 2;
  Tensor<S> out(Shape{s.n, s.c, Ho, Wo});
  const auto& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx)
          out(n, c, y, xx) = S(0.25) * (xv(n, c, 2 * y, 2 * xx) + xv(n, c, 2 * y, 2 * xx + 1) +
                                        xv(n, c, 2 * y + 1, 2 * xx) + xv(n, c, 2 * y + 1, 2 * xx + 1));
  return make_result<S>(std::move(out), {x}, [x](Node<S>& self) {
    if (auto* g = x.grad_sink()) {
      const Shape s = self.value.shape();
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
          for (int y = 0; y < s.h; ++y)
            for (int xx = 0; xx < s.w; ++xx) {
              const S v = S(0.25) * self.grad(n, c, y, xx);
              (*g)(n, c, 2 * y, 2 * xx) += v;
              (*g)(n, c, 2 * y, 2 * xx + 1) += v;
              (*g)(n, c, 2 * y + 1, 2 * xx) += v;
              (*g)(n, c, 2 * y + 1, 2 * xx + 1) += v;
            }
    }
  });
}

namespace detail {
struct LerpIndex {
  std::vector<int> i0, i1;
  std::vector<double> t;
};
/// Half-pixel-centre source coordinates for resizing `in` samples to `out`.
inline LerpIndex lerp_index(int in, int out) {
  LerpIndex li;
  li.i0.resize(out);
  li.i1.resize(out);
  li.t.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    li.i0[o] = i0;
    li.i1[o] = std::min(i0 + 1, in - 1);
    li.t[o] = src - i0;
  }
  return li;
}
}  // namespace detail

/// Bilinear resize with half-pixel centres and edge clamping.
template <typename S>
Var<S> resize_bilinear(const Var<S>& x, int Ho, int Wo) {
  const Shape s = x.shape();
  if (s.h == Ho && s.w == Wo) return x;
  const auto ly = detail::lerp_index(s.h, Ho);
  const auto lx = detail::lerp_index(s.w, Wo);
  Tensor<S> out(Shape{s.n, s.c, Ho, Wo});
  const auto& xv = x.value();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* p = xv.plane(n, c);
      S* o = out.plane(n, c);
      for (int y = 0; y < Ho; ++y) {
        const S ty = static_cast<S>(ly.t[y]);
        const S* r0 = p + static_cast<Eigen::Index>(ly.i0[y]) * s.w;
        const S* r1 = p + static_cast<Eigen::Index>(ly.i1[y]) * s.w;
        for (int xx = 0; xx < Wo; ++xx) {
          const S tx = static_cast<S>(lx.t[xx]);
          const int a = lx.i0[xx], b = lx.i1[xx];
          o[static_cast<Eigen::Index>(y) * Wo + xx] =
              (S(1) - ty) * ((S(1) - tx) * r0[a] + tx * r0[b]) + ty * ((S(1) - tx) * r1[a] + tx * r1[b]);
        }
      }
    }
  return make_result<S>(std::move(out), {x}, [x, ly, lx, Ho, Wo](Node<S>& self) {
    if (auto* g = x.grad_sink()) {
      const Shape s = x.shape();
      for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
          S* p = g->plane(n, c);
          const S* go = self.grad.plane(n, c);
          for (int y = 0; y < Ho; ++y) {
            const S ty = static_cast<S>(ly.t[y]);
            S* r0 = p + static_cast<Eigen::Index>(ly.i0[y]) * s.w;
            S* r1 = p + static_cast<Eigen::Index>(ly.i1[y]) * s.w;
            for (int xx = 0; xx < Wo; ++xx) {
              const S tx = static_cast<S>(lx.t[xx]);
              const int a = lx.i0[xx], b = lx.i1[xx];
              const S v = go[static_cast<Eigen::Index>(y) * Wo + xx];
              r0[a] += (S(1) - ty) * (S(1) - tx) * v;
              r0[b] += (S(1) - ty) * tx * v;
              r1[a] += ty * (S(1) - tx) * v;
              r1[b] += ty * tx * v;
            }
          }
        }
    }
  });
}

template <typename S>
Var<S> upsample2(const Var<S>& x) {
  return resize_bilinear(x, x.shape().h * 2, x.shape().w * 2);
}

/// Back-warp: out[y,x] = bilinear sample of img at (x + dx, y + dy), zero padding.
/// flow: (N,2,H,W) pixel offsets, channel 0 = dx, channel 1 = dy.
template <typename S>
Var<S> backward_warp(const Var<S>& img, const Var<S>& flow) {
  const Shape is = img.shape();
  const Shape fs = flow.shape();
  require(fs.c == 2 && fs.n == is.n && fs.h == is.h && fs.w == is.w,
          "backward_warp: flow " + fs.str() + " does not match image " + is.str());
  const int H = is.h, W = is.w;
  Tensor<S> out(is);
  const auto& iv = img.value();
  const auto& fv = flow.value();
  for (int n = 0; n < is.n; ++n)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const S sx = x + fv(n, 0, y, x);
        const S sy = y + fv(n, 1, y, x);
        const S fx0 = std::floor(sx), fy0 = std::floor(sy);
        const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
        const S wx = sx - fx0, wy = sy - fy0;
        const bool vx0 = x0 >= 0 && x0 < W, vx1 = x0 + 1 >= 0 && x0 + 1 < W;
        const bool vy0 = y0 >= 0 && y0 < H, vy1 = y0 + 1 >= 0 && y0 + 1 < H;
        for (int c = 0; c < is.c; ++c) {
          S acc = 0;
          if (vy0 && vx0) acc += (S(1) - wx) * (S(1) - wy) * iv(n, c, y0, x0);
          if (vy0 && vx1) acc += wx * (S(1) - wy) * iv(n, c, y0, x0 + 1);
          if (vy1 && vx0) acc += (S(1) - wx) * wy * iv(n, c, y0 + 1, x0);
          if (vy1 && vx1) acc += wx * wy * iv(n, c, y0 + 1, x0 + 1);
          out(n, c, y, x) = acc;
        }
      }
  return make_result<S>(std::move(out), {img, flow}, [img, flow](Node<S>& self) {
    const Shape is = img.shape();
    const int H = is.h, W = is.w;
    const auto& iv = img.value();
    const auto& fv = flow.value();
    auto* gi = img.grad_sink();
    auto* gf = flow.grad_sink();
    for (int n = 0; n < is.n; ++n)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const S sx = x + fv(n, 0, y, x);
          const S sy = y + fv(n, 1, y, x);
          const S fx0 = std::floor(sx), fy0 = std::floor(sy);
          const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
          const S wx = sx - fx0, wy = sy - fy0;
          const bool vx0 = x0 >= 0 && x0 < W, vx1 = x0 + 1 >= 0 && x0 + 1 < W;
          const bool vy0 = y0 >= 0 && y0 < H, vy1 = y0 + 1 >= 0 && y0 + 1 < H;
          S dsx = 0, dsy = 0;
          for (int c = 0; c < is.c; ++c) {
            const S g = self.grad(n, c, y, x);
            if (g == S(0)) continue;
            const S v00 = (vy0 && vx0) ? iv(n, c, y0, x0) : S(0);
            const S v10 = (vy0 && vx1) ? iv(n, c, y0, x0 + 1) : S(0);
            const S v01 = (vy1 && vx0) ? iv(n, c, y0 + 1, x0) : S(0);
            const S v11 = (vy1 && vx1) ? iv(n, c, y0 + 1, x0 + 1) : S(0);
            if (gf) {
              dsx += g * ((S(1) - wy) * (v10 - v00) + wy * (v11 - v01));
              dsy += g * ((S(1) - wx) * (v01 - v00) + wx * (v11 - v10));
            }
            if (gi) {
              if (vy0 && vx0) (*gi)(n, c, y0, x0) += g * (S(1) - wx) * (S(1) - wy);
              if (vy0 && vx1) (*gi)(n, c, y0, x0 + 1) += g * wx * (S(1) - wy);
              if (vy1 && vx0) (*gi)(n, c, y0 + 1, x0) += g * (S(1) - wx) * wy;
              if (vy1 && vx1) (*gi)(n, c, y0 + 1, x0 + 1) += g * wx * wy;
            }
          }
          if (gf) {
            (*gf)(n, 0, y, x) += dsx;
            (*gf)(n, 1, y, x) += dsy;
          }
        }
  });
}

template <typename S>
Tensor<S> backward_warp(const Tensor<S>& img, const Tensor<S>& flow) {
  NoGradGuard guard;
  return backward_warp(constant(img), constant(flow)).value();
}

// ---------------------------------------------------------------- normalization

/// Per-sample, per-channel standardization computed separately inside and
/// outside `mask` (> 0.5 is inside). A region with fewer than two pixels is
/// standardized with whole-image statistics.
template <typename S>
Var<S> masknorm(const Var<S>& x, const Tensor<S>& mask, S eps = S(1e-5)) {
  const Shape s = x.shape();
  const Shape ms = mask.shape();
  require(ms.c == 1 && ms.h == s.h && ms.w == s.w && (ms.n == s.n || ms.n == 1),
          "masknorm: mask " + ms.str() + " incompatible with " + s.str());
  const Eigen::Index P = s.plane();
  // stats[(n*C + c)*2 + region] = {mean, sigma, uses_global}
  struct Stat {
    S mean, sigma;
    bool global;
  };
  std::vector<Stat> stats(static_cast<std::size_t>(s.n) * s.c * 2);
  std::vector<unsigned char> inside(static_cast<std::size_t>(s.n) * P);
  for (int n = 0; n < s.n; ++n) {
    const S* m = mask.plane(ms.n == 1 ? 0 : n, 0);
    for (Eigen::Index p = 0; p < P; ++p) inside[n * P + p] = m[p] > S(0.5) ? 1 : 0;
  }
  Tensor<S> out(s);
  for (int n = 0; n < s.n; ++n) {
    const unsigned char* in = inside.data() + n * P;
    Eigen::Index cnt[2] = {0, 0};
    for (Eigen::Index p = 0; p < P; ++p) ++cnt[in[p]];
    for (int c = 0; c < s.c; ++c) {
      const S* xp = x.value().plane(n, c);
      S sum[2] = {0, 0}, sq[2] = {0, 0}, all_sum = 0, all_sq = 0;
      for (Eigen::Index p = 0; p < P; ++p) {
        sum[in[p]] += xp[p];
        all_sum += xp[p];
      }
      const S all_mean = all_sum / S(P);
      S mu[2];
      for (int r = 0; r < 2; ++r) mu[r] = cnt[r] > 0 ? sum[r] / S(cnt[r]) : S(0);
      for (Eigen::Index p = 0; p < P; ++p) {
        const S d = xp[p] - mu[in[p]];
        sq[in[p]] += d * d;
        const S da = xp[p] - all_mean;
        all_sq += da * da;
      }
      const S all_sigma = std::sqrt(all_sq / S(P) + eps);
      for (int r = 0; r < 2; ++r) {
        Stat& st = stats[(static_cast<std::size_t>(n) * s.c + c) * 2 + r];
        if (cnt[r] >= 2) {
          st = {mu[r], std::sqrt(sq[r] / S(cnt[r]) + eps), false};
        } else {
          st = {all_mean, all_sigma, true};
        }
      }
      S* op = out.plane(n, c);
      for (Eigen::Index p = 0; p < P; ++p) {
        const Stat& st = stats[(static_cast<std::size_t>(n) * s.c + c) * 2 + in[p]];
        op[p] = (xp[p] - st.mean) / st.sigma;
      }
    }
  }
  return make_result<S>(std::move(out), {x}, [x, stats, inside](Node<S>& self) {
    auto* gx = x.grad_sink();
    if (!gx) return;
    const Shape s = x.shape();
    const Eigen::Index P = s.plane();
    for (int n = 0; n < s.n; ++n) {
      const unsigned char* in = inside.data() + n * P;
      Eigen::Index cnt[2] = {0, 0};
      for (Eigen::Index p = 0; p < P; ++p) ++cnt[in[p]];
      for (int c = 0; c < s.c; ++c) {
        const S* xp = x.value().plane(n, c);
        const S* g = self.grad.plane(n, c);
        const S* y = self.value.plane(n, c);
        S* gp = gx->plane(n, c);
        for (int r = 0; r < 2; ++r) {
          if (cnt[r] == 0) continue;
          const auto& st = stats[(static_cast<std::size_t>(n) * s.c + c) * 2 + r];
          S sg = 0, sgy = 0;
          for (Eigen::Index p = 0; p < P; ++p)
            if (in[p] == r) {
              sg += g[p];
              sgy += g[p] * y[p];
            }
          const S T = st.global ? S(P) : S(cnt[r]);
          for (Eigen::Index p = 0; p < P; ++p) {
            const bool member = in[p] == r;
            if (!st.global && !member) continue;
            const S yhat = (xp[p] - st.mean) / st.sigma;
            gp[p] += ((member ? g[p] : S(0)) - sg / T - yhat * sgy / T) / st.sigma;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- batched matrices

/// (N,C,H,W) -> (N,1,H*W,C): one row per spatial position.
template <typename S>
Var<S> to_rows(const Var<S>& x) {
  const Shape s = x.shape();
  Tensor<S> out(Shape{s.n, 1, static_cast<int>(s.plane()), s.c});
  for (int n = 0; n < s.n; ++n) out.mat(n) = x.value().sample_matrix(n).transpose();
  return make_result<S>(std::move(out), {x}, [x](Node<S>& self) {
    if (auto* g = x.grad_sink())
      for (int n = 0; n < self.value.n(); ++n) g->sample_matrix(n) += self.grad.mat(n).transpose();
  });
}

/// Inverse of to_rows.
template <typename S>
Var<S> from_rows(const Var<S>& m, int h, int w) {
  const Shape s = m.shape();
  require(s.c == 1 && s.h == h * w, "from_rows: row count does not match h*w");
  Tensor<S> out(Shape{s.n, s.w, h, w});
  for (int n = 0; n < s.n; ++n) out.sample_matrix(n) = m.value().mat(n).transpose();
  return make_result<S>(std::move(out), {m}, [m](Node<S>& self) {
    if (auto* g = m.grad_sink())
      for (int n = 0; n < self.value.n(); ++n) g->mat(n) += self.grad.sample_matrix(n).transpose();
  });
}

/// A (N,1,R,K) times B (N,1,K,Q).
template <typename S>
Var<S> bmm(const Var<S>& a, const Var<S>& b) {
  const Shape as = a.shape(), bs = b.shape();
  require(as.n == bs.n && as.c == 1 && bs.c == 1 && as.w == bs.h, "bmm: shape mismatch");
  Tensor<S> out(Shape{as.n, 1, as.h, bs.w});
  for (int n = 0; n < as.n; ++n) out.mat(n).noalias() = a.value().mat(n) * b.value().mat(n);
  return make_result<S>(std::move(out), {a, b}, [a, b](Node<S>& self) {
    for (int n = 0; n < self.value.n(); ++n) {
      if (auto* ga = a.grad_sink()) ga->mat(n).noalias() += self.grad.mat(n) * b.value().mat(n).transpose();
      if (auto* gb = b.grad_sink()) gb->mat(n).noalias() += a.value().mat(n).transpose() * self.grad.mat(n);
    }
  });
}

/// A (N,1,R,K) times B^T for B (N,1,Q,K).
template <typename S>
Var<S> bmm_nt(const Var<S>& a, const Var<S>& b) {
  const Shape as = a.shape(), bs = b.shape();
  require(as.n == bs.n && as.c == 1 && bs.c == 1 && as.w == bs.w, "bmm_nt: shape mismatch");
  Tensor<S> out(Shape{as.n, 1, as.h, bs.h});
  for (int n = 0; n < as.n; ++n) out.mat(n).noalias() = a.value().mat(n) * b.value().mat(n).transpose();
  return make_result<S>(std::move(out), {a, b}, [a, b](Node<S>& self) {
    for (int n = 0; n < self.value.n(); ++n) {
      if (auto* ga = a.grad_sink()) ga->mat(n).noalias() += self.grad.mat(n) * b.value().mat(n);
      if (auto* gb = b.grad_sink()) gb->mat(n).noalias() += self.grad.mat(n).transpose() * a.value().mat(n);
    }
  });
}

/// Each row centred to zero mean then scaled to unit L2 norm (norm + eps).
template <typename S>
Var<S> center_normalize_rows(const Var<S>& m, S eps = S(1e-8)) {
  const Shape s = m.shape();
  require(s.c == 1, "center_normalize_rows: expects (N,1,R,K)");
  Tensor<S> out(s);
  Tensor<S> norms(Shape{s.n, 1, s.h, 1});
  for (int n = 0; n < s.n; ++n) {
    auto src = m.value().mat(n);
    auto dst = out.mat(n);
    for (int r = 0; r < s.h; ++r) {
      auto row = src.row(r);
      const S mu = row.mean();
      dst.row(r).array() = row.array() - mu;
      const S nrm = dst.row(r).norm();
      norms(n, 0, r, 0) = nrm;
      dst.row(r) /= (nrm + eps);
    }
  }
  return make_result<S>(std::move(out), {m}, [m, norms, eps](Node<S>& self) {
    auto* g = m.grad_sink();
    if (!g) return;
    const Shape s = m.shape();
    for (int n = 0; n < s.n; ++n)
      for (int r = 0; r < s.h; ++r) {
        const S nrm = norms(n, 0, r, 0);
        const S d = nrm + eps;
        auto go = self.grad.mat(n).row(r);
        auto y = self.value.mat(n).row(r);
        // centred vector c = y * d
        Eigen::Matrix<S, 1, Eigen::Dynamic> gc = go / d;
        if (nrm > S(0)) {
          const S cg = (y * d).dot(go);
          gc -= (y * d) * (cg / (nrm * d * d));
        }
        const S mu = gc.mean();
        g->mat(n).row(r).array() += gc.array() - mu;
      }
  });
}

/// Row-wise softmax of scale * m over the last axis.
template <typename S>
Var<S> softmax_rows(const Var<S>& m, S scale = S(1)) {
  const Shape s = m.shape();
  require(s.c == 1, "softmax_rows: expects (N,1,R,K)");
  Tensor<S> out(s);
  for (int n = 0; n < s.n; ++n) {
    auto src = m.value().mat(n);
    auto dst = out.mat(n);
    for (int r = 0; r < s.h; ++r) {
      const S mx = src.row(r).maxCoeff() * scale;
      dst.row(r).array() = ((src.row(r).array() * scale) - mx).exp();
      dst.row(r) /= dst.row(r).sum();
    }
  }
  return make_result<S>(std::move(out), {m}, [m, scale](Node<S>& self) {
    auto* g = m.grad_sink();
    if (!g) return;
    for (int n = 0; n < self.value.n(); ++n)
      for (int r = 0; r < self.value.h(); ++r) {
        auto y = self.value.mat(n).row(r).array();
        auto go = self.grad.mat(n).row(r).array();
        const S dot = (y * go).sum();
        g->mat(n).row(r).array() += scale * y * (go - dot);
      }
  });
}

}  // namespace bvton
