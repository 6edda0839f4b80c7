#include "bvton/metrics.hpp"

#include "bvton/image_io.hpp"
#include "bvton/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace bvton::metrics {

namespace {

Eigen::MatrixXd plane(const TensorF& t) {
  Eigen::MatrixXd m(t.h(), t.w());
  for (int y = 0; y < t.h(); ++y)
    for (int x = 0; x < t.w(); ++x) m(y, x) = t(0, 0, y, x);
  return m;
}

// Valid-mode separable filtering with a normalized 1-D kernel.
Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& m, const Eigen::VectorXd& k) {
  const int n = static_cast<int>(k.size());
  const Eigen::Index oh = m.rows() - n + 1, ow = m.cols() - n + 1;
  Eigen::MatrixXd rows(m.rows(), ow);
  for (Eigen::Index x = 0; x < ow; ++x) rows.col(x) = m.middleCols(x, n) * k;
  Eigen::MatrixXd out(oh, ow);
  for (Eigen::Index y = 0; y < oh; ++y) out.row(y) = k.transpose() * rows.middleRows(y, n);
  return out;
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, Eigen::VectorXd& mean) {
  mean = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - mean.transpose();
  const double denom = x.rows() > 1 ? static_cast<double>(x.rows() - 1) : 1.0;
  return (c.transpose() * c) / denom;
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

TensorF to_gray(const TensorF& img) {
  require(img.n() == 1, "to_gray: expects a single image");
  if (img.c() == 1) return img;
  require(img.c() == 3, "to_gray: expects 1 or 3 channels");
  TensorF g(Shape{1, 1, img.h(), img.w()});
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x)
      g(0, 0, y, x) = static_cast<Real>(0.299 * img(0, 0, y, x) + 0.587 * img(0, 1, y, x) + 0.114 * img(0, 2, y, x));
  return g;
}

double ssim(const TensorF& a, const TensorF& b, const SsimOptions& opt) {
  require(a.shape() == b.shape(), "ssim: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  require(a.h() >= opt.window && a.w() >= opt.window, "ssim: image smaller than the window");
  Eigen::VectorXd k(opt.window);
  const double c = (opt.window - 1) * 0.5;
  for (int i = 0; i < opt.window; ++i) k[i] = std::exp(-(i - c) * (i - c) / (2 * opt.sigma * opt.sigma));
  k /= k.sum();
  const Eigen::MatrixXd x = plane(to_gray(a)), y = plane(to_gray(b));
  const Eigen::MatrixXd mx = filter_valid(x, k), my = filter_valid(y, k);
  const Eigen::MatrixXd sxx = filter_valid(x.cwiseProduct(x), k) - mx.cwiseProduct(mx);
  const Eigen::MatrixXd syy = filter_valid(y.cwiseProduct(y), k) - my.cwiseProduct(my);
  const Eigen::MatrixXd sxy = filter_valid(x.cwiseProduct(y), k) - mx.cwiseProduct(my);
  const double c1 = std::pow(opt.k1 * opt.range, 2), c2 = std::pow(opt.k2 * opt.range, 2);
  const Eigen::ArrayXXd num = (2 * mx.cwiseProduct(my).array() + c1) * (2 * sxy.array() + c2);
  const Eigen::ArrayXXd den = (mx.array().square() + my.array().square() + c1) * (sxx.array() + syy.array() + c2);
  return (num / den).mean();
}

double perceptual_distance(const TensorF& a, const TensorF& b, const blocks::FeatureExtractor<Real>& fx) {
  require(a.shape() == b.shape(), "perceptual_distance: shape mismatch");
  NoGradGuard guard;
  const auto fa = fx.forward(constant(train::to_model_range(a)));
  const auto fb = fx.forward(constant(train::to_model_range(b)));
  double total = 0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const TensorF& ta = fa[l].value();
    const TensorF& tb = fb[l].value();
    double level = 0;
    for (int n = 0; n < ta.n(); ++n)
      for (int y = 0; y < ta.h(); ++y)
        for (int x = 0; x < ta.w(); ++x) {
          double na = 0, nb = 0;
          for (int ch = 0; ch < ta.c(); ++ch) {
            na += double(ta(n, ch, y, x)) * ta(n, ch, y, x);
            nb += double(tb(n, ch, y, x)) * tb(n, ch, y, x);
          }
          na = std::sqrt(na) + 1e-10;
          nb = std::sqrt(nb) + 1e-10;
          for (int ch = 0; ch < ta.c(); ++ch) {
            const double d = ta(n, ch, y, x) / na - tb(n, ch, y, x) / nb;
            level += d * d;
          }
        }
    total += level / (static_cast<double>(ta.n()) * ta.h() * ta.w());
  }
  return total / static_cast<double>(fa.size());
}

Eigen::MatrixXd pooled_features(const std::vector<TensorF>& images, const blocks::FeatureExtractor<Real>& fx) {
  require(!images.empty(), "pooled_features: empty image set");
  NoGradGuard guard;
  std::vector<std::vector<double>> rows;
  for (const auto& img : images) {
    std::vector<double> row;
    for (const auto& f : fx.forward(constant(train::to_model_range(img)))) {
      const TensorF& t = f.value();
      for (int ch = 0; ch < t.c(); ++ch) {
        double s = 0;
        for (int y = 0; y < t.h(); ++y)
          for (int x = 0; x < t.w(); ++x) s += t(0, ch, y, x);
        row.push_back(s / (static_cast<double>(t.h()) * t.w()));
      }
    }
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() > 0 && b.rows() > 0, "frechet_distance: empty sample set");
  require(a.cols() == b.cols(), "frechet_distance: feature dimension mismatch");
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd sa = covariance(a, ma), sb = covariance(b, mb);
  const Eigen::Index d = a.cols();
  if (a.rows() <= d || b.rows() <= d) {
    sa += kCovarianceEps * Eigen::MatrixXd::Identity(d, d);
    sb += kCovarianceEps * Eigen::MatrixXd::Identity(d, d);
  }
  // Tr (S1 S2)^1/2 = Tr (S1^1/2 S2 S1^1/2)^1/2, the inner product being symmetric PSD.
  const Eigen::MatrixXd ra = sqrt_psd(sa);
  const Eigen::MatrixXd inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double v = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt;
  return std::max(v, 0.0);
}

double frechet_feature_distance(const std::vector<TensorF>& a, const std::vector<TensorF>& b,
                                const blocks::FeatureExtractor<Real>& fx) {
  require(!a.empty() && !b.empty(), "frechet_feature_distance: empty image set");
  return frechet_distance(pooled_features(a, fx), pooled_features(b, fx));
}

std::string Report::table() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-24s %-10s %-14s %12s\n", "metric", "split", "mode", "value");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-24s %-10s %-14s %12.6f\n", r.metric.c_str(), r.split.c_str(), r.mode.c_str(),
                  r.value);
    os << buf;
  }
  os << "(perceptual and frechet values use a fixed random-conv extractor; not comparable to published numbers)\n";
  return os.str();
}

void Report::write(const std::filesystem::path& dir) const {
  io::write_text(dir / "report.txt", table());
  std::ostringstream os;
  os << "metric\tsplit\tmode\tvalue\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    os << r.metric << '\t' << r.split << '\t' << r.mode << '\t' << buf << '\n';
  }
  io::write_text(dir / "report.tsv", os.str());
}

Report Report::read_tsv(const std::filesystem::path& path) {
  std::istringstream is(io::read_text(path));
  std::string line;
  if (!std::getline(is, line) || line != "metric\tsplit\tmode\tvalue")
    throw io::FormatError(path.string() + ": unexpected report header");
  Report r;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ReportRow row;
    std::string value;
    if (!std::getline(ls, row.metric, '\t') || !std::getline(ls, row.split, '\t') ||
        !std::getline(ls, row.mode, '\t') || !std::getline(ls, value))
      throw io::FormatError(path.string() + ": malformed report row: " + line);
    row.value = std::stod(value);
    r.rows.push_back(row);
  }
  return r;
}

}  // namespace bvton::metrics
