#pragma once

#include <Eigen/Core>

#include <array>
#include <cassert>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>

namespace bvton {

/// Raised when an operation's shape or value precondition is violated.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

/// NCHW extent. Matrices are carried as (N, 1, rows, cols).
struct Shape {
  int n = 1;
  int c = 1;
  int h = 1;
  int w = 1;

  constexpr Eigen::Index size() const {
    return static_cast<Eigen::Index>(n) * c * h * w;
  }
  constexpr Eigen::Index plane() const { return static_cast<Eigen::Index>(h) * w; }
  friend constexpr bool operator==(const Shape& a, const Shape& b) {
    return a.n == b.n && a.c == b.c && a.h == b.h && a.w == b.w;
  }
  friend constexpr bool operator!=(const Shape& a, const Shape& b) { return !(a == b); }

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << "," << c << "," << h << "," << w << ")";
    return os.str();
  }
};

/// Dense NCHW tensor backed by a contiguous Eigen array.
template <typename S>
class Tensor {
 public:
  using Scalar = S;
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MatrixMap = Eigen::Map<RowMatrix>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix>;

  Tensor() = default;
  explicit Tensor(Shape shape, S fill = S(0))
      : shape_(shape), data_(Array::Constant(shape.size(), fill)) {}
  Tensor(Shape shape, Array data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_.size(), "Tensor: data size does not match shape " + shape.str());
  }

  static Tensor zeros(Shape s) { return Tensor(s, S(0)); }
  static Tensor ones(Shape s) { return Tensor(s, S(1)); }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Eigen::Index index(int n, int c, int y, int x) const {
    return ((static_cast<Eigen::Index>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  S& operator()(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const S& operator()(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  S& operator[](Eigen::Index i) { return data_[i]; }
  const S& operator[](Eigen::Index i) const { return data_[i]; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  S* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const S* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  /// Sample `n` viewed as a (C, H*W) row-major matrix.
  MatrixMap sample_matrix(int n) {
    return MatrixMap(plane(n, 0), shape_.c, shape_.plane());
  }
  ConstMatrixMap sample_matrix(int n) const {
    return ConstMatrixMap(plane(n, 0), shape_.c, shape_.plane());
  }
  /// Batched matrix (N,1,R,C) slice `n` as an R x C matrix.
  MatrixMap mat(int n) { return MatrixMap(plane(n, 0), shape_.h, shape_.w); }
  ConstMatrixMap mat(int n) const { return ConstMatrixMap(plane(n, 0), shape_.h, shape_.w); }

  Tensor reshaped(Shape s) const {
    require(s.size() == shape_.size(), "Tensor::reshaped: size mismatch");
    return Tensor(s, data_);
  }

  template <typename T>
  Tensor<T> cast() const {
    return Tensor<T>(shape_, data_.template cast<T>());
  }

  void fill(S v) { data_.setConstant(v); }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_{0, 0, 0, 0};
  Array data_;
};

/// Extract sample `n` as a standalone (1,C,H,W) tensor.
template <typename S>
Tensor<S> sample_of(const Tensor<S>& t, int n) {
  Shape s{1, t.c(), t.h(), t.w()};
  Tensor<S> out(s);
  std::copy(t.plane(n, 0), t.plane(n, 0) + s.size(), out.data());
  return out;
}

/// Stack (1,C,H,W) tensors along N.
template <typename S, typename Range>
Tensor<S> stack_samples(const Range& parts) {
  require(!parts.empty(), "stack_samples: empty input");
  const Shape first = parts.front().shape();
  Shape s{0, first.c, first.h, first.w};
  for (const auto& p : parts) {
    require(p.c() == first.c && p.h() == first.h && p.w() == first.w,
            "stack_samples: mismatched shapes");
    s.n += p.n();
  }
  Tensor<S> out(s);
  S* dst = out.data();
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.size(), dst);
    dst += p.size();
  }
  return out;
}

}  // namespace bvton
