#include "bvton/synth_data.hpp"

#include "bvton/image_io.hpp"
#include "bvton/ops.hpp"
#include "bvton/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace bvton::data {

namespace {

constexpr double kPi = std::numbers::pi;

struct Vec {
  double x = 0, y = 0;
};
struct Color {
  double r = 0, g = 0, b = 0;
};

Color mix(const Color& a, const Color& b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

Color hsv(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  Color rgb;
  if (hp < 1) rgb = {c, x, 0};
  else if (hp < 2) rgb = {x, c, 0};
  else if (hp < 3) rgb = {0, c, x};
  else if (hp < 4) rgb = {0, x, c};
  else if (hp < 5) rgb = {x, 0, c};
  else rgb = {c, 0, x};
  const double m = v - c;
  return {rgb.r + m, rgb.g + m, rgb.b + m};
}

bool in_ellipse(const Vec& p, const Vec& c, double rx, double ry) {
  const double dx = (p.x - c.x) / rx, dy = (p.y - c.y) / ry;
  return dx * dx + dy * dy <= 1.0;
}

/// Convex polygon given counter-clockwise in image coordinates (y down):
/// all cross products share a sign.
bool in_convex(const Vec& p, const std::vector<Vec>& poly) {
  bool pos = false, neg = false;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec& a = poly[i];
    const Vec& b = poly[(i + 1) % poly.size()];
    const double cr = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (cr > 0) pos = true;
    if (cr < 0) neg = true;
    if (pos && neg) return false;
  }
  return true;
}

bool in_capsule(const Vec& p, const Vec& a, const Vec& b, double r) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return dx * dx + dy * dy <= r * r;
}

/// The top as laid flat on the in-shop canvas (pixel units).
struct Garment {
  double cx, top, neck_half, body_half, body_half_hem, drop;
  double hem, hem_slope;
  double sleeve_angle, sleeve_len, sleeve_half;
  Vec pivot[2];
  Vec neck_center;
  double neck_radius;
  // texture
  Color base, accent;
  int pattern;
  double period, phase;
  Vec logo;
  double logo_r;

  double hem_at(double x) const { return hem + hem_slope * (x - cx); }

  std::vector<Vec> torso_poly() const {
    const double xl = cx - body_half_hem, xr = cx + body_half_hem;
    return {{cx - body_half, top + drop}, {xl, hem_at(xl)},        {xr, hem_at(xr)},
            {cx + body_half, top + drop}, {cx + neck_half, top}, {cx - neck_half, top}};
  }

  Vec sleeve_dir(int side) const {
    const double s = side == 0 ? -1.0 : 1.0;
    return {s * std::sin(sleeve_angle), std::cos(sleeve_angle)};
  }

  /// -1 outside, 0 torso, 1 image-left sleeve, 2 image-right sleeve.
  int part(const Vec& q, const std::vector<Vec>& torso) const {
    if (in_ellipse(q, neck_center, neck_radius, neck_radius)) return -1;
    if (in_convex(q, torso)) return 0;
    for (int side = 0; side < 2; ++side) {
      const Vec u = sleeve_dir(side);
      const double dx = q.x - pivot[side].x, dy = q.y - pivot[side].y;
      const double t = dx * u.x + dy * u.y;
      const double perp = -dx * u.y + dy * u.x;
      if (t >= 0 && t <= sleeve_len && std::abs(perp) <= sleeve_half) return 1 + side;
    }
    return -1;
  }

  Color texture(const Vec& q) const {
    double t = 0;
    switch (pattern) {
      case 1: t = 0.5 + 0.5 * std::sin(2 * kPi * q.y / period + phase); break;
      case 2: t = 0.5 + 0.5 * std::sin(2 * kPi * q.x / period + phase); break;
      case 3: t = 0.5 + 0.5 * std::sin(2 * kPi * (q.x + q.y) / (period * 1.4) + phase); break;
      default: break;
    }
    Color c = mix(base, accent, 0.55 * t);
    const double d = std::hypot(q.x - logo.x, q.y - logo.y);
    const double a = smoothstep(logo_r + 1.0, logo_r - 1.0, d);
    return mix(c, accent, a);
  }
};

/// Garment-to-person map G = A o B: B rotates each sleeve sector about its
/// pivot by an angle that fades along the angular coordinate, A is an
/// axis-aligned scale plus translation.
struct Deformation {
  const Garment* g = nullptr;
  double phi[2] = {0, 0};
  double sx = 1, sy = 1;
  Vec anchor;  // person position of (g.cx, g.top)
  double beta_max = 170.0 * kPi / 180.0;

  double weight(double beta) const {
    if (beta <= 0 || beta >= beta_max) return 0.0;
    const double a0 = g->sleeve_angle;
    return beta < a0 ? smoothstep(0.0, a0, beta) : smoothstep(beta_max, a0, beta);
  }

  Vec A(const Vec& q) const { return {anchor.x + sx * (q.x - g->cx), anchor.y + sy * (q.y - g->top)}; }
  Vec A_inv(const Vec& p) const { return {g->cx + (p.x - anchor.x) / sx, g->top + (p.y - anchor.y) / sy}; }

  Vec B(const Vec& q) const {
    for (int side = 0; side < 2; ++side) {
      const double s = side == 0 ? -1.0 : 1.0;
      const double dx = q.x - g->pivot[side].x, dy = q.y - g->pivot[side].y;
      const double beta = std::atan2(s * dx, dy);
      const double w = weight(beta);
      if (w <= 0) continue;
      const double r = std::hypot(dx, dy);
      const double b2 = beta - phi[side] * w;
      return {g->pivot[side].x + s * r * std::sin(b2), g->pivot[side].y + r * std::cos(b2)};
    }
    return q;
  }

  Vec B_inv(const Vec& p) const {
    for (int side = 0; side < 2; ++side) {
      const double s = side == 0 ? -1.0 : 1.0;
      const double dx = p.x - g->pivot[side].x, dy = p.y - g->pivot[side].y;
      const double target = std::atan2(s * dx, dy);
      if (target <= 0 || target >= beta_max) continue;
      // beta - phi w(beta) is increasing on (0, beta_max); bisect for the preimage.
      double lo = 0, hi = beta_max;
      for (int it = 0; it < 48; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid - phi[side] * weight(mid) < target) lo = mid;
        else hi = mid;
      }
      const double beta = 0.5 * (lo + hi);
      const double r = std::hypot(dx, dy);
      return {g->pivot[side].x + s * r * std::sin(beta), g->pivot[side].y + r * std::cos(beta)};
    }
    return p;
  }

  Vec G(const Vec& q) const { return A(B(q)); }
  Vec F(const Vec& p) const { return B_inv(A_inv(p)); }
};

struct Body {
  Vec head;
  double rx, ry, hairline;
  bool long_hair;
  double strand_end, strand_half;
  double neck_half, neck_top, shoulder_y, shoulder_half;
  double waist, hip_half;
  Vec arm_start[2], arm_end[2];
  double arm_half;
  Vec eyes[2];
  Color skin, hair, bottom, bg, eye;
};

struct Scene {
  Garment g;
  Deformation d;
  Body b;
  Style style;
  std::vector<Vec> torso;
  double garment_xmin, garment_xmax, garment_ymin, garment_ymax;  // person-space bounds

  int garment_part_at(const Vec& p, Vec* q_out) const {
    if (p.x < garment_xmin || p.x > garment_xmax || p.y < garment_ymin || p.y > garment_ymax) return -1;
    const Vec q = d.F(p);
    if (q_out) *q_out = q;
    return g.part(q, torso);
  }

  bool in_bottom(const Vec& p, double height) const {
    if (p.y < b.waist) return false;
    const double t = (p.y - b.waist) / std::max(1.0, height - b.waist);
    const double half = b.hip_half + 3.0 * t * (b.hip_half / 18.0);
    return std::abs(p.x - b.head.x) <= half;
  }

  bool in_torso_skin(const Vec& p) const {
    if (std::abs(p.x - b.head.x) <= b.neck_half && p.y >= b.neck_top && p.y <= b.shoulder_y + 6) return true;
    if (p.y < b.shoulder_y || p.y > b.waist + 2) return false;
    const double t = (p.y - b.shoulder_y) / std::max(1.0, b.waist - b.shoulder_y);
    const double half = (b.shoulder_half - 3) + t * (b.hip_half - (b.shoulder_half - 3));
    return std::abs(p.x - b.head.x) <= half;
  }

  bool in_hair(const Vec& p) const {
    if (in_ellipse(p, {b.head.x, b.head.y - 1}, b.rx + 1.5, b.ry + 1.5)) {
      if (p.y < b.hairline) return true;
      if (!in_ellipse(p, b.head, b.rx, b.ry) && p.y < b.head.y) return true;
    }
    if (b.long_hair && p.y >= b.head.y - 2 && p.y <= b.strand_end) {
      const double off = std::abs(p.x - b.head.x);
      if (std::abs(off - b.rx) <= b.strand_half) return true;
    }
    return false;
  }

  bool in_face(const Vec& p) const { return in_ellipse(p, b.head, b.rx, b.ry) && p.y >= b.hairline; }

  /// Painter's algorithm at one point; returns label and colour.
  int paint(const Vec& p, double height, const Color& bg, Color* color) const {
    int label = kBackground;
    Color c = bg;
    if (in_torso_skin(p)) {
      label = kTorsoSkin;
      c = b.skin;
    }
    auto paint_bottom = [&] {
      if (in_bottom(p, height)) {
        label = kBottom;
        const double fold = 0.04 * std::sin((p.x - b.head.x) * 0.5);
        c = {b.bottom.r + fold, b.bottom.g + fold, b.bottom.b + fold};
      }
    };
    auto paint_arms = [&] {
      for (int side = 0; side < 2; ++side)
        if (in_capsule(p, b.arm_start[side], b.arm_end[side], b.arm_half)) {
          label = side == 0 ? kLeftArm : kRightArm;
          c = mix(b.skin, {0, 0, 0}, 0.05);
        }
    };
    auto paint_top = [&] {
      Vec q;
      if (garment_part_at(p, &q) >= 0) {
        label = kUpper;
        c = g.texture(q);
      }
    };
    if (style == Style::Tucked) {
      paint_arms();
      paint_top();
      paint_bottom();
    } else {
      paint_bottom();
      paint_arms();
      paint_top();
    }
    if (in_hair(p)) {
      label = kHair;
      c = b.hair;
    }
    if (in_face(p)) {
      label = kFace;
      c = b.skin;
      for (const auto& e : b.eyes)
        if (std::hypot(p.x - e.x, p.y - e.y) <= 1.3) c = b.eye;
    }
    if (color) *color = c;
    return label;
  }
};

Scene build_scene(Rng& rng, int height, int width, std::optional<Style> forced) {
  const double kx = width / 96.0, ky = height / 128.0;
  Scene sc;
  const int style_idx = rng.uniform_int(0, 3);
  sc.style = forced ? *forced : static_cast<Style>(style_idx);

  // garment on the in-shop canvas
  Garment& g = sc.g;
  g.cx = 48 * kx;
  g.top = 20 * ky;
  g.neck_half = 8 * kx;
  g.body_half = rng.uniform(24, 28) * kx;
  g.body_half_hem = g.body_half * rng.uniform(0.92, 1.02);
  g.drop = 4 * ky;
  double length = rng.uniform(66, 74);
  g.hem_slope = 0;
  switch (sc.style) {
    case Style::Overlong: length = rng.uniform(90, 98); break;
    case Style::Asymmetric:
      length = rng.uniform(70, 80);
      g.hem_slope = (rng.bernoulli(0.5) ? 1 : -1) * rng.uniform(0.3, 0.45) * ky / kx;
      break;
    default: break;
  }
  g.hem = g.top + length * ky;
  g.sleeve_angle = 55.0 * kPi / 180.0;
  g.sleeve_len = rng.uniform(16, 30) * kx;
  g.sleeve_half = rng.uniform(6, 7.5) * kx;
  g.pivot[0] = {g.cx - g.body_half + 4 * kx, g.top + g.drop + 5 * ky};
  g.pivot[1] = {g.cx + g.body_half - 4 * kx, g.top + g.drop + 5 * ky};
  g.neck_center = {g.cx, g.top - 1 * ky};
  g.neck_radius = rng.uniform(6, 8) * kx;
  g.base = hsv(rng.uniform(), rng.uniform(0.4, 0.8), rng.uniform(0.55, 0.95));
  g.accent = hsv(rng.uniform(), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.95));
  g.pattern = rng.uniform_int(0, 3);
  g.period = rng.uniform(8, 14) * kx;
  g.phase = rng.uniform(0, 2 * kPi);
  g.logo = {g.cx + rng.uniform(-8, 8) * kx, g.top + rng.uniform(16, 30) * ky};
  g.logo_r = rng.bernoulli(0.5) ? rng.uniform(3, 6) * kx : 0.0;
  sc.torso = g.torso_poly();

  // body
  Body& b = sc.b;
  b.head = {(48 + rng.uniform(-3, 3)) * kx, (19 + rng.uniform(-1.5, 1.5)) * ky};
  b.rx = rng.uniform(8.5, 10) * kx;
  b.ry = rng.uniform(10.5, 12) * ky;
  b.hairline = b.head.y - b.ry * rng.uniform(0.25, 0.45);
  b.long_hair = rng.bernoulli(0.35);
  b.strand_half = rng.uniform(2.5, 3.5) * kx;
  b.neck_half = 4.5 * kx;
  b.neck_top = b.head.y + 0.7 * b.ry;
  b.shoulder_y = b.head.y + b.ry + 7 * ky;
  b.strand_end = b.shoulder_y + rng.uniform(4, 14) * ky;
  b.shoulder_half = rng.uniform(19, 22) * kx;

  Deformation& d = sc.d;
  d.g = &sc.g;
  d.sx = b.shoulder_half / g.body_half;
  d.sy = rng.uniform(0.74, 0.8);
  d.anchor = {b.head.x, b.shoulder_y - 2 * ky};
  for (int side = 0; side < 2; ++side) {
    const double arm = rng.uniform(24, 36) * kPi / 180.0;
    d.phi[side] = g.sleeve_angle - arm;
    const double s = side == 0 ? -1.0 : 1.0;
    const Vec dir{s * std::sin(arm), std::cos(arm)};
    const Vec start = d.A(g.pivot[side]);
    Vec lin{d.sx * dir.x, d.sy * dir.y};
    const double n = std::hypot(lin.x, lin.y);
    const double len = rng.uniform(46, 54) * ky;
    b.arm_start[side] = start;
    b.arm_end[side] = {start.x + lin.x / n * len, start.y + lin.y / n * len};
  }
  b.arm_half = 0.6 * g.sleeve_half * d.sx;

  const double hem_person = d.anchor.y + d.sy * (g.hem - g.top);
  switch (sc.style) {
    case Style::Tucked: b.waist = hem_person - rng.uniform(8, 14) * ky; break;
    case Style::Untucked: b.waist = hem_person - rng.uniform(4, 10) * ky; break;
    case Style::Overlong: b.waist = b.shoulder_y + rng.uniform(42, 48) * ky; break;
    case Style::Asymmetric: b.waist = hem_person - rng.uniform(0, 6) * ky; break;
  }
  b.hip_half = rng.uniform(17, 20) * kx;
  b.eyes[0] = {b.head.x - 3.5 * kx, b.head.y - 1.5 * ky};
  b.eyes[1] = {b.head.x + 3.5 * kx, b.head.y - 1.5 * ky};

  const double tone = rng.uniform();
  b.skin = mix({0.96, 0.80, 0.69}, {0.55, 0.38, 0.28}, tone);
  const double hv = rng.uniform(0.08, 0.35);
  b.hair = {hv * rng.uniform(0.9, 1.4), hv, hv * rng.uniform(0.6, 1.0)};
  b.bottom = hsv(rng.uniform(), rng.uniform(0.2, 0.7), rng.uniform(0.15, 0.5));
  const double bv = rng.uniform(0.6, 0.9);
  b.bg = {bv + rng.uniform(-0.05, 0.05), bv + rng.uniform(-0.05, 0.05), bv + rng.uniform(-0.05, 0.05)};
  b.eye = {0.1, 0.08, 0.08};

  // person-space bounding box of the deformed garment (sampled on its outline region)
  sc.garment_xmin = 1e9;
  sc.garment_xmax = -1e9;
  sc.garment_ymin = 1e9;
  sc.garment_ymax = -1e9;
  for (double qy = 0; qy < height; qy += 0.5)
    for (double qx = 0; qx < width; qx += 0.5) {
      const Vec q{qx, qy};
      if (g.part(q, sc.torso) < 0) continue;
      const Vec p = d.G(q);
      sc.garment_xmin = std::min(sc.garment_xmin, p.x);
      sc.garment_xmax = std::max(sc.garment_xmax, p.x);
      sc.garment_ymin = std::min(sc.garment_ymin, p.y);
      sc.garment_ymax = std::max(sc.garment_ymax, p.y);
    }
  sc.garment_xmin -= 2;
  sc.garment_ymin -= 2;
  sc.garment_xmax += 2;
  sc.garment_ymax += 2;
  return sc;
}

constexpr double kSub[3] = {-1.0 / 3.0, 0.0, 1.0 / 3.0};

}  // namespace

const char* label_name(int label) {
  static const char* names[kClasses] = {"background", "hair",   "face",     "torso-skin",
                                        "upper-clothes", "bottom-clothes", "left-arm", "right-arm"};
  require(label >= 0 && label < kClasses, "label_name: bad label");
  return names[label];
}

std::array<std::uint8_t, 3> palette_color(int label) {
  static const std::array<std::uint8_t, 3> pal[kClasses] = {
      {{0, 0, 0}}, {{128, 64, 0}}, {{255, 200, 150}}, {{230, 150, 120}},
      {{220, 30, 60}}, {{40, 60, 200}}, {{60, 200, 80}}, {{230, 220, 40}}};
  require(label >= 0 && label < kClasses, "palette_color: bad label");
  return pal[label];
}

const char* to_string(Mode m) { return m == Mode::Paired ? "paired" : "unpaired"; }

const char* to_string(Style s) {
  switch (s) {
    case Style::Tucked: return "tucked";
    case Style::Untucked: return "untucked";
    case Style::Overlong: return "overlong";
    case Style::Asymmetric: return "asymmetric";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  if (s == "paired") return Mode::Paired;
  if (s == "unpaired") return Mode::Unpaired;
  throw ContractError("unknown dataset mode '" + s + "'");
}

Style parse_style(const std::string& s) {
  for (Style st : {Style::Tucked, Style::Untucked, Style::Overlong, Style::Asymmetric})
    if (s == to_string(st)) return st;
  throw ContractError("unknown wearing style '" + s + "'");
}

std::string sample_id(Mode mode, std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%08llu", mode == Mode::Paired ? 'p' : 'u', static_cast<unsigned long long>(seed));
  return buf;
}

TensorF one_hot(const LabelMap& labels, int classes) {
  TensorF t(Shape{1, classes, static_cast<int>(labels.rows()), static_cast<int>(labels.cols())});
  for (Eigen::Index y = 0; y < labels.rows(); ++y)
    for (Eigen::Index x = 0; x < labels.cols(); ++x) {
      const int l = labels(y, x);
      require(l < classes, "one_hot: label out of range");
      t(0, l, static_cast<int>(y), static_cast<int>(x)) = 1;
    }
  return t;
}

LabelMap argmax_labels(const TensorF& layout) {
  require(layout.n() == 1, "argmax_labels: expects a single sample");
  LabelMap m(layout.h(), layout.w());
  for (int y = 0; y < layout.h(); ++y)
    for (int x = 0; x < layout.w(); ++x) {
      int best = 0;
      for (int c = 1; c < layout.c(); ++c)
        if (layout(0, c, y, x) > layout(0, best, y, x)) best = c;
      m(y, x) = static_cast<std::uint8_t>(best);
    }
  return m;
}

TensorF pose_heatmaps(const std::vector<Keypoint>& pose, int height, int width, double sigma) {
  TensorF t(Shape{1, static_cast<int>(pose.size()), height, width});
  const double inv = 1.0 / (2 * sigma * sigma);
  for (std::size_t j = 0; j < pose.size(); ++j) {
    if (!pose[j].visible) continue;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = x - pose[j].x, dy = y - pose[j].y;
        t(0, static_cast<int>(j), y, x) = static_cast<Real>(std::exp(-(dx * dx + dy * dy) * inv));
      }
  }
  return t;
}

TensorF mask_union(const TensorF& a, const TensorF& b) {
  require(a.shape() == b.shape(), "mask_union: shape mismatch");
  TensorF out(a.shape());
  out.array() = a.array().max(b.array());
  return out;
}

TensorF SampleRecord::layout() const { return one_hot(labels); }

TensorF SampleRecord::mask(int label) const {
  TensorF m(Shape{1, 1, static_cast<int>(labels.rows()), static_cast<int>(labels.cols())});
  for (Eigen::Index i = 0; i < labels.size(); ++i) m[i] = labels.data()[i] == label ? 1 : 0;
  return m;
}

TensorF SampleRecord::part_mask(int part) const {
  NoGradGuard guard;
  return slice_channels(constant(part_masks), part, part + 1).value();
}

TensorF SampleRecord::inshop_part(int part) const {
  require(has_inshop, "inshop_part: sample " + id + " has no in-shop clothes");
  NoGradGuard guard;
  return slice_channels(constant(inshop_parts), part, part + 1).value();
}

TensorF SampleRecord::inshop_clothes() const {
  require(has_inshop, "inshop_clothes: sample " + id + " has no in-shop clothes");
  NoGradGuard guard;
  return mul(constant(inshop), constant(inshop_mask)).value();
}

TensorF SampleRecord::occlusion_mask() const { return mask_union(mask(kHair), mask(kBottom)); }

SampleRecord generate_sample(std::uint64_t seed, Mode mode, int height, int width, std::optional<Style> style) {
  require(height > 0 && width > 0 && height % 8 == 0 && width % 8 == 0,
          "generate_sample: resolution " + std::to_string(height) + "x" + std::to_string(width) +
              " must be positive and divisible by 8");
  Rng rng(seed * 0x9E3779B97F4A7C15ULL + 17);
  const Scene sc = build_scene(rng, height, width, style);

  SampleRecord rec;
  rec.id = sample_id(mode, seed);
  rec.mode = mode;
  rec.style = sc.style;
  rec.seed = seed;
  rec.person = TensorF(Shape{1, 3, height, width});
  rec.labels = LabelMap(height, width);
  rec.part_masks = TensorF(Shape{1, 3, height, width});

  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double noise = rng.uniform(-0.025, 0.025);
      const Color bg{sc.b.bg.r + noise, sc.b.bg.g + noise, sc.b.bg.b + noise};
      Color acc;
      for (double oy : kSub)
        for (double ox : kSub) {
          Color c;
          sc.paint({x + ox, y + oy}, height, bg, &c);
          acc = {acc.r + c.r, acc.g + c.g, acc.b + c.b};
        }
      rec.person(0, 0, y, x) = static_cast<Real>(acc.r / 9);
      rec.person(0, 1, y, x) = static_cast<Real>(acc.g / 9);
      rec.person(0, 2, y, x) = static_cast<Real>(acc.b / 9);
      const Vec p{static_cast<double>(x), static_cast<double>(y)};
      const int label = sc.paint(p, height, bg, nullptr);
      rec.labels(y, x) = static_cast<std::uint8_t>(label);
      if (label == kUpper) {
        const int part = sc.garment_part_at(p, nullptr);
        rec.part_masks(0, part, y, x) = 1;
      }
    }
  rec.person = io::quantize_image(rec.person);

  // COCO-18 pose; the person's right side is image-left.
  const Body& b = sc.b;
  auto kp = [&](Vec v, bool vis = true) {
    Keypoint k{v.x, v.y, vis && v.x >= 0 && v.y >= 0 && v.x <= width - 1 && v.y <= height - 1};
    return k;
  };
  auto lerp = [](Vec a, Vec c, double t) { return Vec{a.x + (c.x - a.x) * t, a.y + (c.y - a.y) * t}; };
  rec.pose.resize(kJoints);
  const double kxs = width / 96.0, kys = height / 128.0;
  rec.pose[0] = kp({b.head.x, b.head.y + 2 * kys});
  rec.pose[1] = kp({b.head.x, b.shoulder_y - 2 * kys});
  for (int side = 0; side < 2; ++side) {
    const int base = side == 0 ? 2 : 5;
    rec.pose[base] = kp(b.arm_start[side]);
    rec.pose[base + 1] = kp(lerp(b.arm_start[side], b.arm_end[side], 0.5));
    rec.pose[base + 2] = kp(b.arm_end[side]);
    const double s = side == 0 ? -1.0 : 1.0;
    const int hip = side == 0 ? 8 : 11;
    rec.pose[hip] = kp({b.head.x + s * b.hip_half, b.waist + 3 * kys});
    rec.pose[hip + 1] = kp({0, 0}, false);
    rec.pose[hip + 2] = kp({0, 0}, false);
    rec.pose[side == 0 ? 14 : 15] = kp(b.eyes[side]);
    rec.pose[side == 0 ? 16 : 17] = kp({b.head.x + s * b.rx, b.head.y});
  }
  (void)kxs;
  rec.heatmaps = pose_heatmaps(rec.pose, height, width);

  if (mode == Mode::Paired) {
    rec.has_inshop = true;
    rec.inshop = TensorF(Shape{1, 3, height, width});
    rec.inshop_mask = TensorF(Shape{1, 1, height, width});
    rec.inshop_parts = TensorF(Shape{1, 3, height, width});
    rec.gt_flow = TensorF(Shape{1, 2, height, width});
    const Color white{1, 1, 1};
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        Color acc;
        for (double oy : kSub)
          for (double ox : kSub) {
            const Vec q{x + ox, y + oy};
            const Color c = sc.g.part(q, sc.torso) >= 0 ? sc.g.texture(q) : white;
            acc = {acc.r + c.r, acc.g + c.g, acc.b + c.b};
          }
        rec.inshop(0, 0, y, x) = static_cast<Real>(acc.r / 9);
        rec.inshop(0, 1, y, x) = static_cast<Real>(acc.g / 9);
        rec.inshop(0, 2, y, x) = static_cast<Real>(acc.b / 9);
        const int part = sc.g.part({static_cast<double>(x), static_cast<double>(y)}, sc.torso);
        if (part >= 0) {
          rec.inshop_mask(0, 0, y, x) = 1;
          rec.inshop_parts(0, part, y, x) = 1;
        }
        const Vec f = sc.d.F({static_cast<double>(x), static_cast<double>(y)});
        rec.gt_flow(0, 0, y, x) = static_cast<Real>(f.x - x);
        rec.gt_flow(0, 1, y, x) = static_cast<Real>(f.y - y);
      }
    rec.inshop = io::quantize_image(rec.inshop);

    // Control points: a lattice over the worn top's bounding box (person
    // canvas) and its exact in-shop counterparts.
    int x0 = width, x1 = -1, y0 = height, y1 = -1;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if (rec.labels(y, x) == kUpper) {
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
        }
    require(x1 > x0 && y1 > y0, "generate_sample: top is not visible");
    const warp::Points person_pts = warp::lattice(5, x0, y0, x1, y1);
    warp::Points inshop_pts(person_pts.rows(), 2);
    for (Eigen::Index i = 0; i < person_pts.rows(); ++i) {
      const Vec f = sc.d.F({person_pts(i, 0), person_pts(i, 1)});
      inshop_pts(i, 0) = f.x;
      inshop_pts(i, 1) = f.y;
    }
    rec.theta = warp::fit_semirigid(inshop_pts, person_pts);
  }
  return rec;
}

// ---------------------------------------------------------------- files

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_channels_ppm(const std::filesystem::path& path, const TensorF& three) {
  io::write_ppm(path, three);
}

const char* kManifestHeader = "id\tmode\tstyle\tseed\theight\twidth\tdir";

}  // namespace

void write_sample(const SampleRecord& rec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  io::write_ppm(dir / "person.ppm", rec.person);
  io::write_pgm(dir / "layout.pgm", rec.labels);
  write_channels_ppm(dir / "parts.ppm", rec.part_masks);
  std::ostringstream pose;
  for (const auto& k : rec.pose) pose << fmt_double(k.x) << ' ' << fmt_double(k.y) << ' ' << (k.visible ? 1 : 0) << '\n';
  io::write_text(dir / "pose.txt", pose.str());
  if (rec.has_inshop) {
    io::write_ppm(dir / "inshop.ppm", rec.inshop);
    io::write_mask(dir / "inshop_mask.pgm", rec.inshop_mask);
    write_channels_ppm(dir / "inshop_parts.ppm", rec.inshop_parts);
    io::write_flow(dir / "gt_flow.bvfl", rec.gt_flow);
    std::ostringstream th;
    th << rec.theta.grid << '\n';
    for (Eigen::Index i = 0; i < rec.theta.source.rows(); ++i)
      th << fmt_double(rec.theta.source(i, 0)) << ' ' << fmt_double(rec.theta.source(i, 1)) << ' '
         << fmt_double(rec.theta.target(i, 0)) << ' ' << fmt_double(rec.theta.target(i, 1)) << '\n';
    io::write_text(dir / "theta.txt", th.str());
  }
}

SampleRecord read_sample(const ManifestEntry& e, const std::filesystem::path& root) {
  const std::filesystem::path dir = root / e.dir;
  auto need = [&](const char* name) {
    const auto p = dir / name;
    if (!std::filesystem::exists(p)) throw io::FormatError("sample " + e.id + ": missing file " + p.string());
    return p;
  };
  auto check = [&](const TensorF& t, int c, const char* what) {
    if (t.c() != c || t.h() != e.height || t.w() != e.width)
      throw io::FormatError("sample " + e.id + ": " + what + " has shape " + t.shape().str() +
                            ", manifest says " + std::to_string(e.height) + "x" + std::to_string(e.width));
  };
  SampleRecord rec;
  rec.id = e.id;
  rec.mode = e.mode;
  rec.style = e.style;
  rec.seed = e.seed;
  rec.person = io::read_ppm(need("person.ppm"));
  check(rec.person, 3, "person image");
  rec.labels = io::read_pgm(need("layout.pgm"));
  if (rec.labels.rows() != e.height || rec.labels.cols() != e.width)
    throw io::FormatError("sample " + e.id + ": layout size mismatch");
  if (rec.labels.maxCoeff() >= kClasses) throw io::FormatError("sample " + e.id + ": layout label out of range");
  rec.part_masks = io::read_ppm(need("parts.ppm"));
  check(rec.part_masks, 3, "part masks");
  for (int c = 0; c < kParts; ++c)
    for (int y = 0; y < e.height; ++y)
      for (int x = 0; x < e.width; ++x) {
        const Real v = rec.part_masks(0, c, y, x);
        if ((v != 0 && v != 1) || (v == 1 && rec.labels(y, x) != kUpper))
          throw io::FormatError("sample " + e.id + ": part mask " + std::to_string(c) +
                                " is not a binary subset of the upper-clothes region");
      }

  std::istringstream pose(io::read_text(need("pose.txt")));
  std::string line;
  while (std::getline(pose, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Keypoint k;
    int vis = 0;
    if (!(ls >> k.x >> k.y >> vis)) throw io::FormatError("sample " + e.id + ": malformed pose line '" + line + "'");
    k.visible = vis != 0;
    rec.pose.push_back(k);
  }
  if (static_cast<int>(rec.pose.size()) != kJoints)
    throw io::FormatError("sample " + e.id + ": expected " + std::to_string(kJoints) + " keypoints");
  rec.heatmaps = pose_heatmaps(rec.pose, e.height, e.width);

  if (e.mode == Mode::Paired) {
    rec.has_inshop = true;
    rec.inshop = io::read_ppm(need("inshop.ppm"));
    check(rec.inshop, 3, "in-shop image");
    rec.inshop_mask = io::read_mask(need("inshop_mask.pgm"));
    check(rec.inshop_mask, 1, "in-shop mask");
    rec.inshop_parts = io::read_ppm(need("inshop_parts.ppm"));
    check(rec.inshop_parts, 3, "in-shop part masks");
    rec.gt_flow = io::read_flow(need("gt_flow.bvfl"));
    check(rec.gt_flow, 2, "flow");
    std::istringstream th(io::read_text(need("theta.txt")));
    int grid = 0;
    if (!(th >> grid) || grid < 2) throw io::FormatError("sample " + e.id + ": malformed theta.txt");
    warp::Points src(grid * grid, 2), dst(grid * grid, 2);
    for (int i = 0; i < grid * grid; ++i)
      if (!(th >> src(i, 0) >> src(i, 1) >> dst(i, 0) >> dst(i, 1)))
        throw io::FormatError("sample " + e.id + ": truncated theta.txt");
    rec.theta = warp::fit_semirigid(src, dst);
  }
  return rec;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.tsv";
  if (!std::filesystem::exists(path)) throw io::FormatError("dataset " + dir.string() + ": missing manifest.tsv");
  std::istringstream is(io::read_text(path));
  std::string line;
  std::vector<ManifestEntry> out;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.rfind("id\t", 0) == 0) continue;
    std::istringstream ls(line);
    ManifestEntry e;
    std::string mode, style;
    if (!(ls >> e.id >> mode >> style >> e.seed >> e.height >> e.width >> e.dir))
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) + ": malformed manifest entry");
    try {
      e.mode = parse_mode(mode);
      e.style = parse_style(style);
    } catch (const ContractError& err) {
      throw io::FormatError(path.string() + ":" + std::to_string(lineno) + ": " + err.what());
    }
    out.push_back(e);
  }
  return out;
}

std::vector<ManifestEntry> write_dataset(int n, Mode mode, const std::filesystem::path& out_dir,
                                         std::uint64_t base_seed, int height, int width,
                                         const std::vector<Style>& styles) {
  require(n >= 0, "write_dataset: negative sample count");
  std::filesystem::create_directories(out_dir);
  std::vector<ManifestEntry> existing;
  if (std::filesystem::exists(out_dir / "manifest.tsv")) existing = read_manifest(out_dir);
  std::set<std::string> ids;
  for (const auto& e : existing) ids.insert(e.id);

  std::vector<ManifestEntry> added;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(i);
    std::optional<Style> style;
    if (!styles.empty()) style = styles[static_cast<std::size_t>(i) % styles.size()];
    const SampleRecord rec = generate_sample(seed, mode, height, width, style);
    require(ids.insert(rec.id).second, "write_dataset: duplicate sample id " + rec.id);
    write_sample(rec, out_dir / rec.id);
    added.push_back({rec.id, mode, rec.style, seed, height, width, rec.id});
  }
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto* list : {&existing, &added})
    for (const auto& e : *list)
      os << e.id << '\t' << to_string(e.mode) << '\t' << to_string(e.style) << '\t' << e.seed << '\t' << e.height
         << '\t' << e.width << '\t' << e.dir << '\n';
  io::write_text(out_dir / "manifest.tsv", os.str());

  std::ostringstream pal;
  pal << "label\tname\tr\tg\tb\n";
  for (int l = 0; l < kClasses; ++l) {
    const auto c = palette_color(l);
    pal << l << '\t' << label_name(l) << '\t' << int(c[0]) << '\t' << int(c[1]) << '\t' << int(c[2]) << '\n';
  }
  io::write_text(out_dir / "palette.tsv", pal.str());
  return added;
}

std::vector<SampleRecord> load_dataset(const std::filesystem::path& dir) {
  std::vector<SampleRecord> out;
  for (const auto& e : read_manifest(dir)) out.push_back(read_sample(e, dir));
  return out;
}

}  // namespace bvton::data
