#pragma once

#include <Eigen/Core>

#include "ittr/ops.hpp"

namespace ittr::detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

template <typename T>
inline bool wants_grad(const Tensor<T>& t) {
  return t.defined() && t.requires_grad();
}

template <typename T>
inline T* grad_of(const Tensor<T>& t) {
  return t.node()->grad_buffer().data();
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace ittr::detail
