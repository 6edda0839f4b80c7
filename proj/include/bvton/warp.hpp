#pragma once

// Deterministic geometric primitives: back-warping, flow smoothness, semi-rigid
// control-point deformation, random affine misalignment and mask degeneration.

#include "bvton/ops.hpp"
#include "bvton/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <vector>

namespace bvton::warp {

using bvton::backward_warp;

/// Mean absolute horizontal plus mean absolute vertical first difference over
/// every channel. Zero exactly when each channel is spatially constant.
template <typename S>
Var<S> total_variation(const Var<S>& field) {
  const Shape s = field.shape();
  const auto& v = field.value();
  const Eigen::Index nx = static_cast<Eigen::Index>(s.n) * s.c * s.h * (s.w - 1);
  const Eigen::Index ny = static_cast<Eigen::Index>(s.n) * s.c * (s.h - 1) * s.w;
  const S ix = nx > 0 ? S(1) / S(nx) : S(0);
  const S iy = ny > 0 ? S(1) / S(ny) : S(0);
  S tx = 0, ty = 0;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          if (x + 1 < s.w) tx += std::abs(v(n, c, y, x + 1) - v(n, c, y, x));
          if (y + 1 < s.h) ty += std::abs(v(n, c, y + 1, x) - v(n, c, y, x));
        }
  Tensor<S> out(Shape{1, 1, 1, 1}, tx * ix + ty * iy);
  return make_result<S>(std::move(out), {field}, [field, ix, iy](Node<S>& self) {
    auto* g = field.grad_sink();
    if (!g) return;
    const Shape s = field.shape();
    const auto& v = field.value();
    const S gr = self.grad[0];
    auto sgn = [](S d) { return d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0)); };
    for (int n = 0; n < s.n; ++n)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < s.h; ++y)
          for (int x = 0; x < s.w; ++x) {
            if (x + 1 < s.w) {
              const S d = sgn(v(n, c, y, x + 1) - v(n, c, y, x)) * gr * ix;
              (*g)(n, c, y, x + 1) += d;
              (*g)(n, c, y, x) -= d;
            }
            if (y + 1 < s.h) {
              const S d = sgn(v(n, c, y + 1, x) - v(n, c, y, x)) * gr * iy;
              (*g)(n, c, y + 1, x) += d;
              (*g)(n, c, y, x) -= d;
            }
          }
  });
}

template <typename S>
S total_variation(const Tensor<S>& field) {
  NoGradGuard guard;
  return total_variation(constant(field)).value()[0];
}

// ---------------------------------------------------------------- semi-rigid

using Points = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Matched control points on a P x P lattice (row-major). Content located at
/// `source` points is carried to the corresponding `target` points.
struct ControlGrid {
  int grid = 0;
  Points source;
  Points target;

  friend bool operator==(const ControlGrid& a, const ControlGrid& b) {
    return a.grid == b.grid && a.source == b.source && a.target == b.target;
  }
};

/// Regular P x P lattice spanning [x0,x1] x [y0,y1].
inline Points lattice(int grid, double x0, double y0, double x1, double y1) {
  Points p(grid * grid, 2);
  for (int i = 0; i < grid; ++i)
    for (int j = 0; j < grid; ++j) {
      p(i * grid + j, 0) = x0 + (x1 - x0) * j / (grid - 1);
      p(i * grid + j, 1) = y0 + (y1 - y0) * i / (grid - 1);
    }
  return p;
}

inline ControlGrid fit_semirigid(const Points& source, const Points& target) {
  require(source.rows() == target.rows(), "fit_semirigid: point counts differ");
  require(source.rows() >= 4, "fit_semirigid: need at least 4 control points");
  const int grid = static_cast<int>(std::lround(std::sqrt(static_cast<double>(source.rows()))));
  require(grid >= 2 && grid * grid == source.rows(), "fit_semirigid: points must form a P x P lattice");
  const Eigen::RowVector2d centre = source.colwise().mean();
  const double spread = (source.rowwise() - centre).rowwise().norm().maxCoeff();
  require(spread > 1e-9, "fit_semirigid: degenerate (coincident) source points");
  require(source.allFinite() && target.allFinite(), "fit_semirigid: non-finite control points");
  return ControlGrid{grid, source, target};
}

inline ControlGrid reverse_params(const ControlGrid& theta) {
  return ControlGrid{theta.grid, theta.target, theta.source};
}

/// Moving-least-squares affine map interpolating `from[i] -> to[i]`, evaluated
/// at `x`, with weights 1 / (|from_i - x|^2 + eps).
inline Eigen::Vector2d mls_affine(const Points& from, const Points& to, const Eigen::Vector2d& x,
                                  double eps = 1e-8) {
  const Eigen::Index m = from.rows();
  Eigen::VectorXd w(m);
  for (Eigen::Index i = 0; i < m; ++i) w[i] = 1.0 / ((from.row(i).transpose() - x).squaredNorm() + eps);
  const double ws = w.sum();
  const Eigen::RowVector2d pstar = (w.transpose() * from) / ws;
  const Eigen::RowVector2d qstar = (w.transpose() * to) / ws;
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  Eigen::Matrix2d B = Eigen::Matrix2d::Zero();
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::RowVector2d ph = from.row(i) - pstar;
    const Eigen::RowVector2d qh = to.row(i) - qstar;
    A += w[i] * ph.transpose() * ph;
    B += w[i] * ph.transpose() * qh;
  }
  const Eigen::RowVector2d xr = x.transpose() - pstar;
  // Collinear neighbourhoods fall back to the weighted translation.
  if (std::abs(A.determinant()) < 1e-12 * (A.squaredNorm() + 1e-300))
    return (xr + qstar).transpose();
  return (xr * A.inverse() * B + qstar).transpose();
}

/// Dense back-warp flow (1,2,H,W) realising the deformation theta.
template <typename S>
Tensor<S> control_flow(const ControlGrid& theta, int h, int w) {
  Tensor<S> flow(Shape{1, 2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Eigen::Vector2d src = mls_affine(theta.target, theta.source, Eigen::Vector2d(x, y));
      flow(0, 0, y, x) = static_cast<S>(src.x() - x);
      flow(0, 1, y, x) = static_cast<S>(src.y() - y);
    }
  return flow;
}

/// Deform a (1,C,H,W) mask by theta; output clamped to [0,1].
template <typename S>
Tensor<S> apply_control_deform(const Tensor<S>& mask, const ControlGrid& theta) {
  require(mask.n() == 1, "apply_control_deform: expects a single sample");
  Tensor<S> out = backward_warp(mask, control_flow<S>(theta, mask.h(), mask.w()));
  out.array() = out.array().max(S(0)).min(S(1));
  return out;
}

// ---------------------------------------------------------------- affine

/// Rotate by `degrees` about the image centre, then translate by (tx, ty)
/// pixels; bilinear resampling with zero padding. Works on (N,C,H,W).
template <typename S>
Tensor<S> affine_transform(const Tensor<S>& img, double degrees, double tx, double ty) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cx = (img.w() - 1) * 0.5, cy = (img.h() - 1) * 0.5;
  Tensor<S> flow(Shape{img.n(), 2, img.h(), img.w()});
  for (int n = 0; n < img.n(); ++n)
    for (int y = 0; y < img.h(); ++y)
      for (int x = 0; x < img.w(); ++x) {
        // Inverse map: p = R^-1 (q - c - t) + c.
        const double qx = x - cx - tx, qy = y - cy - ty;
        const double px = ca * qx + sa * qy + cx;
        const double py = -sa * qx + ca * qy + cy;
        flow(n, 0, y, x) = static_cast<S>(px - x);
        flow(n, 1, y, x) = static_cast<S>(py - y);
      }
  if (degrees == 0.0 && tx == 0.0 && ty == 0.0) return img;
  return backward_warp(img, flow);
}

/// Random affine misalignment: one v ~ U[-r, r] drives a rotation of v degrees
/// and a translation of (v, v) pixels. Returns the drawn v through `drawn`.
template <typename S>
Tensor<S> random_affine(const Tensor<S>& img, double r, Rng& rng, double* drawn = nullptr) {
  require(r >= 0.0, "random_affine: bound must be non-negative");
  const double v = r == 0.0 ? 0.0 : rng.uniform(-r, r);
  if (drawn) *drawn = v;
  return affine_transform(img, v, v, v);
}

// ---------------------------------------------------------------- degeneration

/// 1-D area-resampling operator (out x in): each output cell averages the
/// input cells it overlaps, weighted by overlap length.
inline Eigen::MatrixXd area_operator(int in, int out) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(out, in);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double lo = o * scale, hi = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(lo)); i < in && i < hi; ++i) {
      const double ov = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (ov > 0) R(o, i) = ov / scale;
    }
  }
  return R;
}

/// Area-interpolated resize of every plane of a tensor.
template <typename S>
Tensor<S> area_resize(const Tensor<S>& t, int ho, int wo) {
  require(ho > 0 && wo > 0, "area_resize: target dims must be positive");
  const Eigen::MatrixXd Ry = area_operator(t.h(), ho);
  const Eigen::MatrixXd Rx = area_operator(t.w(), wo);
  Tensor<S> out(Shape{t.n(), t.c(), ho, wo});
  using RM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c) {
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> src(
          t.plane(n, c), t.h(), t.w());
      const RM r = Ry * src.template cast<double>() * Rx.transpose();
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> dst(out.plane(n, c), ho, wo);
      dst = r.cast<S>();
    }
  return out;
}

inline constexpr double kBinarizeThreshold = 0.5;

template <typename S>
Tensor<S> binarize(const Tensor<S>& t, double threshold = kBinarizeThreshold) {
  Tensor<S> out(t.shape());
  out.array() = (t.array() >= S(threshold)).template cast<S>();
  return out;
}

/// Boundary degeneration: area-resize down to (h_alpha, w_alpha), area-resize
/// back, binarize at 0.5.
template <typename S>
Tensor<S> degenerate_mask(const Tensor<S>& mask, int h_alpha = 100, int w_alpha = 75) {
  require(h_alpha > 0 && w_alpha > 0, "degenerate_mask: target dims must be positive");
  require(h_alpha <= mask.h() && w_alpha <= mask.w(), "degenerate_mask: target dims exceed mask dims");
  return binarize(area_resize(area_resize(mask, h_alpha, w_alpha), mask.h(), mask.w()));
}

}  // namespace bvton::warp
