#include "bvton/train.hpp"

#include "bvton/image_io.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace bvton::train {

void LossTrace::add(std::vector<double> row) {
  require(row.size() == columns_.size(), "LossTrace: row width does not match columns");
  rows_.push_back(std::move(row));
}

double LossTrace::head_mean(std::size_t window) const {
  require(!rows_.empty(), "LossTrace: empty trace");
  const std::size_t k = std::min(window, rows_.size());
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += rows_[i][0];
  return s / static_cast<double>(k);
}

double LossTrace::tail_mean(std::size_t window) const {
  require(!rows_.empty(), "LossTrace: empty trace");
  const std::size_t k = std::min(window, rows_.size());
  double s = 0;
  for (std::size_t i = rows_.size() - k; i < rows_.size(); ++i) s += rows_[i][0];
  return s / static_cast<double>(k);
}

void LossTrace::write_tsv(const std::filesystem::path& path) const {
  std::ostringstream os;
  os << "step";
  for (const auto& c : columns_) os << '\t' << c;
  os << '\n';
  char buf[40];
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    os << i;
    for (double v : rows_[i]) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << '\t' << buf;
    }
    os << '\n';
  }
  io::write_text(path, os.str());
}

LossTrace LossTrace::read_tsv(const std::filesystem::path& path) {
  std::istringstream is(io::read_text(path));
  std::string line;
  if (!std::getline(is, line)) throw io::FormatError(path.string() + ": empty loss trace");
  std::istringstream hs(line);
  std::string col;
  std::vector<std::string> cols;
  hs >> col;  // step
  while (hs >> col) cols.push_back(col);
  LossTrace t(cols);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long step;
    ls >> step;
    std::vector<double> row(cols.size());
    for (auto& v : row)
      if (!(ls >> v)) throw io::FormatError(path.string() + ": malformed loss row");
    t.add(row);
  }
  return t;
}

BatchSampler::BatchSampler(int n, std::uint64_t seed) : n_(n), rng_(seed) {
  require(n > 0, "BatchSampler: empty dataset");
  order_.resize(static_cast<std::size_t>(n));
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), 0);
  for (int i = n_ - 1; i > 0; --i) std::swap(order_[i], order_[rng_.uniform_int(0, i)]);
  pos_ = 0;
}

std::vector<int> BatchSampler::next(int batch) {
  std::vector<int> out;
  for (int b = 0; b < batch; ++b) {
    if (pos_ == order_.size()) reshuffle();
    out.push_back(order_[pos_++]);
  }
  return out;
}

TensorF cat(const std::vector<TensorF>& parts) {
  NoGradGuard guard;
  std::vector<VarF> vars;
  for (const auto& p : parts) vars.push_back(constant(p));
  return concat_channels(vars).value();
}

TensorF masked(const TensorF& img, const TensorF& mask) {
  NoGradGuard guard;
  return mul(constant(img), constant(mask)).value();
}

TensorF to_model_range(const TensorF& img) {
  TensorF out(img.shape());
  out.array() = img.array() * Real(2) - Real(1);
  return out;
}

VarF to_model_range(const VarF& img) { return affine(img, Real(2), Real(-1)); }

int resolve_steps(int steps, int epochs, int dataset_size, int batch) {
  if (steps > 0) return steps;
  require(epochs > 0 && batch > 0, "resolve_steps: need a positive step or epoch count");
  return epochs * ((dataset_size + batch - 1) / batch);
}

}  // namespace bvton::train
