#pragma once

// Small pieces shared by the training loops: loss traces, seeded batch
// sampling and tensor bookkeeping.

#include "bvton/ops.hpp"
#include "bvton/random.hpp"
#include "bvton/types.hpp"

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace bvton::train {

/// Per-step record of the total loss (column 0) followed by named parts.
class LossTrace {
 public:
  LossTrace() = default;
  explicit LossTrace(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  void add(std::vector<double> row);
  std::size_t steps() const { return rows_.size(); }
  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<double>& row(std::size_t i) const { return rows_.at(i); }
  double total(std::size_t i) const { return rows_.at(i).at(0); }

  /// Mean of the total over the first / last `window` steps.
  double head_mean(std::size_t window = 10) const;
  double tail_mean(std::size_t window = 10) const;
  /// tail_mean / head_mean: the running-mean reduction achieved by training.
  double reduction(std::size_t window = 10) const { return tail_mean(window) / head_mean(window); }

  void write_tsv(const std::filesystem::path& path) const;
  static LossTrace read_tsv(const std::filesystem::path& path);

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<double>> rows_;
};

/// Epoch-wise shuffled batches with wrap-around; deterministic per seed.
class BatchSampler {
 public:
  BatchSampler(int n, std::uint64_t seed);
  std::vector<int> next(int batch);

 private:
  void reshuffle();
  int n_;
  Rng rng_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

/// Channel concatenation of plain tensors.
TensorF cat(const std::vector<TensorF>& parts);
/// Elementwise product with a (N,1,H,W) mask broadcast over channels.
TensorF masked(const TensorF& img, const TensorF& mask);
/// Storage range [0,1] to model range [-1,1] and back.
TensorF to_model_range(const TensorF& img);
VarF to_model_range(const VarF& img);

/// Steps for a run: explicit count if positive, else epochs over the dataset.
int resolve_steps(int steps, int epochs, int dataset_size, int batch);

}  // namespace bvton::train

namespace bvton::train {

/// Optimizer and schedule settings of one training stage.
struct StageOptions {
  int steps = 200;   // > 0 overrides epochs
  int epochs = 20;
  int batch = 4;
  double lr = 1e-4;
  double lr_disc = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  std::uint64_t seed = 1;
  /// Called after every step with (step, total loss); may be empty.
  std::function<void(int, double)> on_step;
};

}  // namespace bvton::train
