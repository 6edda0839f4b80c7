#pragma once

#include "bvton/autograd.hpp"

#include <Eigen/Core>

#include <cstdint>

namespace bvton {

/// Scalar used by the training pipeline; unit tests also instantiate double.
using Real = float;
using TensorF = Tensor<Real>;
using VarF = Var<Real>;

/// Per-pixel class indices, row-major H x W.
using LabelMap = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace bvton
