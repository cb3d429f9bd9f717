#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "r3l/common.hpp"

namespace r3l {

template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapMat = Eigen::Map<MatX<S>>;
template <typename S>
using CMapMat = Eigen::Map<const MatX<S>>;
template <typename S>
using MapVec = Eigen::Map<VecX<S>>;
template <typename S>
using CMapVec = Eigen::Map<const VecX<S>>;

// Dense n-d array of scalars in row-major order. The shape is dynamic; all
// math views it through Eigen maps.
template <typename S>
struct TensorT {
  std::vector<int> shape;
  VecX<S> data;

  TensorT() = default;

  static std::int64_t count(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
      if (e <= 0) fail("tensor extent must be positive, got ", e);
      n *= e;
    }
    return n;
  }

  static TensorT zeros(std::vector<int> shape) {
    TensorT t;
    t.data = VecX<S>::Zero(count(shape));
    t.shape = std::move(shape);
    return t;
  }

  static TensorT from(std::vector<int> shape, std::initializer_list<S> values) {
    TensorT t;
    std::int64_t n = count(shape);
    if (n != static_cast<std::int64_t>(values.size()))
      fail("tensor init: shape wants ", n, " values, got ", values.size());
    t.shape = std::move(shape);
    t.data.resize(n);
    std::int64_t i = 0;
    for (S v : values) t.data[i++] = v;
    return t;
  }

  static TensorT scalar(S v) { return from({1}, {v}); }

  std::int64_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  MapMat<S> mat(int rows, int cols) {
    if (static_cast<std::int64_t>(rows) * cols != size())
      fail("tensor view ", rows, "x", cols, " does not match size ", size());
    return MapMat<S>(data.data(), rows, cols);
  }
  CMapMat<S> mat(int rows, int cols) const {
    if (static_cast<std::int64_t>(rows) * cols != size())
      fail("tensor view ", rows, "x", cols, " does not match size ", size());
    return CMapMat<S>(data.data(), rows, cols);
  }

  // Leading-dim x rest view, the common case for batched ops.
  MapMat<S> rows_view() {
    return mat(dim(0), static_cast<int>(size() / dim(0)));
  }
  CMapMat<S> rows_view() const {
    return mat(dim(0), static_cast<int>(size() / dim(0)));
  }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const { return data.allFinite(); }

  std::uint64_t checksum() const {
    return fnv1a64(data.data(), static_cast<std::size_t>(size()) * sizeof(S));
  }
};

using Tensor = TensorT<float>;

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace r3l
