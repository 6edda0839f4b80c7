#pragma once

// Evaluation metrics. The perceptual and Frechet distances use the fixed
// random-conv feature extractor, so their magnitudes are only comparable
// between runs of this code.

#include "bvton/blocks.hpp"
#include "bvton/types.hpp"

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace bvton::metrics {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double range = 1.0;
};

/// Luminance (0.299, 0.587, 0.114) of a (1,3,H,W) image; (1,1,H,W) passes through.
TensorF to_gray(const TensorF& img);

/// Mean SSIM over all valid Gaussian windows of the grayscale images.
double ssim(const TensorF& a, const TensorF& b, const SsimOptions& opt = {});

/// Feature-space distance: channel-normalized features, squared L2 summed over
/// channels and averaged over positions, then averaged over levels.
double perceptual_distance(const TensorF& a, const TensorF& b, const blocks::FeatureExtractor<Real>& fx);

/// Spatially pooled features, one row per image (16 + 32 + 64 columns).
Eigen::MatrixXd pooled_features(const std::vector<TensorF>& images, const blocks::FeatureExtractor<Real>& fx);

inline constexpr double kCovarianceEps = 1e-6;

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^1/2) of two sample sets (rows = samples).
double frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double frechet_feature_distance(const std::vector<TensorF>& a, const std::vector<TensorF>& b,
                                const blocks::FeatureExtractor<Real>& fx);

struct ReportRow {
  std::string metric, split, mode;
  double value = 0;
};

struct Report {
  std::vector<ReportRow> rows;

  void add(std::string metric, std::string split, std::string mode, double value) {
    rows.push_back({std::move(metric), std::move(split), std::move(mode), value});
  }
  std::string table() const;
  /// Writes report.txt (table) and report.tsv (metric, split, mode, value).
  void write(const std::filesystem::path& dir) const;
  static Report read_tsv(const std::filesystem::path& path);
};

}  // namespace bvton::metrics
