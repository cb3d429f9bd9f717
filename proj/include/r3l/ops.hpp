#pragma once

#include <cmath>
#include <vector>

#include "r3l/rng.hpp"
#include "r3l/tensor.hpp"

// Forward/backward kernels as free functions over TensorT. The autodiff tape
// wraps these; inference paths call them directly.

namespace r3l {

struct Conv2dDims {
  int n, c, h, w;        // input
  int k, kh, kw;         // kernel
  int stride;
  int oh, ow;            // output
};

template <typename S>
Conv2dDims conv2d_dims(const TensorT<S>& x, const TensorT<S>& kernel,
                       int stride) {
  if (x.rank() != 4)
    fail("conv2d: input must be rank-4 [N,C,H,W], got ", shape_str(x.shape));
  if (kernel.rank() != 4)
    fail("conv2d: kernel must be rank-4 [K,C,kh,kw], got ",
         shape_str(kernel.shape));
  if (stride < 1) fail("conv2d: stride must be >= 1, got ", stride);
  Conv2dDims d;
  d.n = x.dim(0);
  d.c = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.k = kernel.dim(0);
  d.kh = kernel.dim(2);
  d.kw = kernel.dim(3);
  d.stride = stride;
  if (kernel.dim(1) != d.c)
    fail("conv2d: kernel channel dim ", kernel.dim(1),
         " does not match input channel dim ", d.c);
  if (d.kh > d.h)
    fail("conv2d: kernel height ", d.kh, " exceeds input height ", d.h);
  if (d.kw > d.w)
    fail("conv2d: kernel width ", d.kw, " exceeds input width ", d.w);
  d.oh = (d.h - d.kh) / stride + 1;
  d.ow = (d.w - d.kw) / stride + 1;
  return d;
}

// Patch columns for one image: [C*kh*kw, oh*ow], row order (c, kh, kw).
template <typename S>
void im2col(const S* img, const Conv2dDims& d, MatX<S>& col) {
  col.resize(d.c * d.kh * d.kw, d.oh * d.ow);
  for (int c = 0; c < d.c; ++c) {
    const S* plane = img + static_cast<std::int64_t>(c) * d.h * d.w;
    for (int ih = 0; ih < d.kh; ++ih) {
      for (int iw = 0; iw < d.kw; ++iw) {
        int row = (c * d.kh + ih) * d.kw + iw;
        for (int oy = 0; oy < d.oh; ++oy) {
          const S* src = plane + (oy * d.stride + ih) * d.w + iw;
          S* dst = col.data() + (static_cast<std::int64_t>(row) * d.oh + oy) * d.ow;
          if (d.stride == 1) {
            std::copy(src, src + d.ow, dst);
          } else {
            for (int ox = 0; ox < d.ow; ++ox) dst[ox] = src[ox * d.stride];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const MatX<S>& col, const Conv2dDims& d, S* img) {
  for (int c = 0; c < d.c; ++c) {
    S* plane = img + static_cast<std::int64_t>(c) * d.h * d.w;
    for (int ih = 0; ih < d.kh; ++ih) {
      for (int iw = 0; iw < d.kw; ++iw) {
        int row = (c * d.kh + ih) * d.kw + iw;
        for (int oy = 0; oy < d.oh; ++oy) {
          S* dst = plane + (oy * d.stride + ih) * d.w + iw;
          const S* src =
              col.data() + (static_cast<std::int64_t>(row) * d.oh + oy) * d.ow;
          for (int ox = 0; ox < d.ow; ++ox) dst[ox * d.stride] += src[ox];
        }
      }
    }
  }
}

// Valid (no padding) cross-correlation. bias may be null.
template <typename S>
TensorT<S> conv2d_forward(const TensorT<S>& x, const TensorT<S>& kernel,
                          const TensorT<S>* bias, int stride) {
  Conv2dDims d = conv2d_dims(x, kernel, stride);
  if (bias && bias->size() != d.k)
    fail("conv2d: bias size ", bias->size(), " does not match kernel count ",
         d.k);
  TensorT<S> out = TensorT<S>::zeros({d.n, d.k, d.oh, d.ow});
  auto wmat = kernel.mat(d.k, d.c * d.kh * d.kw);
  MatX<S> col;
  for (int n = 0; n < d.n; ++n) {
    im2col(x.ptr() + static_cast<std::int64_t>(n) * d.c * d.h * d.w, d, col);
    MapMat<S> om(out.ptr() + static_cast<std::int64_t>(n) * d.k * d.oh * d.ow,
                 d.k, d.oh * d.ow);
    om.noalias() = wmat * col;
    if (bias) om.colwise() += CMapVec<S>(bias->ptr(), d.k);
  }
  return out;
}

template <typename S>
TensorT<S> conv2d_forward(const TensorT<S>& x, const TensorT<S>& kernel,
                          int stride) {
  return conv2d_forward<S>(x, kernel, nullptr, stride);
}

template <typename S>
void conv2d_backward(const TensorT<S>& x, const TensorT<S>& kernel, int stride,
                     const TensorT<S>& dout, TensorT<S>* dx, TensorT<S>* dw,
                     TensorT<S>* db) {
  Conv2dDims d = conv2d_dims(x, kernel, stride);
  MatX<S> col, dcol;
  auto wmat = kernel.mat(d.k, d.c * d.kh * d.kw);
  for (int n = 0; n < d.n; ++n) {
    CMapMat<S> dom(dout.ptr() + static_cast<std::int64_t>(n) * d.k * d.oh * d.ow,
                   d.k, d.oh * d.ow);
    if (dw || dx) {
      if (dw) {
        im2col(x.ptr() + static_cast<std::int64_t>(n) * d.c * d.h * d.w, d, col);
        dw->mat(d.k, d.c * d.kh * d.kw).noalias() += dom * col.transpose();
      }
      if (dx) {
        dcol.noalias() = wmat.transpose() * dom;
        col2im_add(dcol, d,
                   dx->ptr() + static_cast<std::int64_t>(n) * d.c * d.h * d.w);
      }
    }
    if (db) MapVec<S>(db->ptr(), d.k) += dom.rowwise().sum();
  }
}

// y = x * w^T + b with x:[N,in], w:[out,in], b:[out].
template <typename S>
TensorT<S> dense_forward(const TensorT<S>& x, const TensorT<S>& w,
                         const TensorT<S>* bias) {
  if (x.rank() != 2 || w.rank() != 2)
    fail("dense: expected rank-2 input and weight, got ", shape_str(x.shape),
         " and ", shape_str(w.shape));
  int n = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in)
    fail("dense: weight inner dim ", w.dim(1), " does not match input dim ",
         in);
  if (bias && bias->size() != out)
    fail("dense: bias size ", bias->size(), " does not match output dim ", out);
  TensorT<S> y = TensorT<S>::zeros({n, out});
  y.mat(n, out).noalias() = x.mat(n, in) * w.mat(out, in).transpose();
  if (bias) y.mat(n, out).rowwise() += CMapVec<S>(bias->ptr(), out).transpose();
  return y;
}

template <typename S>
TensorT<S> dense_forward(const TensorT<S>& x, const TensorT<S>& w) {
  return dense_forward<S>(x, w, nullptr);
}

template <typename S>
void dense_backward(const TensorT<S>& x, const TensorT<S>& w,
                    const TensorT<S>& dout, TensorT<S>* dx, TensorT<S>* dw,
                    TensorT<S>* db) {
  int n = x.dim(0), in = x.dim(1), out = w.dim(0);
  auto dym = dout.mat(n, out);
  if (dx) dx->mat(n, in).noalias() += dym * w.mat(out, in);
  if (dw) dw->mat(out, in).noalias() += dym.transpose() * x.mat(n, in);
  if (db) MapVec<S>(db->ptr(), out) += dym.colwise().sum().transpose();
}

template <typename S>
TensorT<S> relu_forward(const TensorT<S>& x) {
  TensorT<S> y = x;
  y.data = y.data.cwiseMax(S(0));
  return y;
}

template <typename S>
TensorT<S> tanh_forward(const TensorT<S>& x) {
  TensorT<S> y = x;
  y.data = y.data.array().tanh().matrix();
  return y;
}

// Row-wise log-softmax for rank-2 input.
template <typename S>
TensorT<S> log_softmax_rows(const TensorT<S>& x) {
  if (x.rank() != 2) fail("log_softmax: expected rank-2, got ", shape_str(x.shape));
  int n = x.dim(0), k = x.dim(1);
  TensorT<S> y = x;
  auto ym = y.mat(n, k);
  for (int i = 0; i < n; ++i) {
    S m = ym.row(i).maxCoeff();
    S lse = std::log((ym.row(i).array() - m).exp().sum()) + m;
    ym.row(i).array() -= lse;
  }
  return y;
}

template <typename S>
TensorT<S> softmax_rows(const TensorT<S>& x) {
  TensorT<S> y = log_softmax_rows(x);
  y.data = y.data.array().exp().matrix();
  return y;
}

// Cosine similarity of each row of x against each row of anchors:
// out[i][j] = <x_i, a_j> / (|x_i| |a_j|). Zero-norm rows on either side give
// cosine 0; the caller counts those via degenerate_count.
template <typename S>
TensorT<S> cosine_rows_forward(const TensorT<S>& x, const TensorT<S>& anchors,
                               std::int64_t* degenerate_count = nullptr) {
  if (x.rank() != 2 || anchors.rank() != 2)
    fail("cosine_rows: expected rank-2 operands, got ", shape_str(x.shape),
         " and ", shape_str(anchors.shape));
  int n = x.dim(0), m = x.dim(1), d = anchors.dim(0);
  if (anchors.dim(1) != m)
    fail("cosine_rows: width mismatch, latent ", m, " vs anchor ",
         anchors.dim(1));
  TensorT<S> out = TensorT<S>::zeros({n, d});
  VecX<S> xn = x.mat(n, m).rowwise().norm();
  VecX<S> an = anchors.mat(d, m).rowwise().norm();
  out.mat(n, d).noalias() = x.mat(n, m) * anchors.mat(d, m).transpose();
  auto om = out.mat(n, d);
  for (int i = 0; i < n; ++i) {
    if (xn[i] == S(0)) {
      om.row(i).setZero();
      if (degenerate_count) *degenerate_count += d;
      continue;
    }
    for (int j = 0; j < d; ++j) {
      if (an[j] == S(0)) {
        om(i, j) = S(0);
        if (degenerate_count) ++*degenerate_count;
      } else {
        om(i, j) /= xn[i] * an[j];
      }
    }
  }
  return out;
}

// Gradient w.r.t. x only; anchors are constants in the graph.
template <typename S>
void cosine_rows_backward(const TensorT<S>& x, const TensorT<S>& anchors,
                          const TensorT<S>& cos_out, const TensorT<S>& dout,
                          TensorT<S>* dx) {
  int n = x.dim(0), m = x.dim(1), d = anchors.dim(0);
  VecX<S> xn = x.mat(n, m).rowwise().norm();
  VecX<S> an = anchors.mat(d, m).rowwise().norm();
  auto g = dout.mat(n, d);
  auto z = cos_out.mat(n, d);
  auto am = anchors.mat(d, m);
  auto xm = x.mat(n, m);
  auto dxm = dx->mat(n, m);
  MatX<S> gsc(n, d);
  for (int j = 0; j < d; ++j) {
    S inv = an[j] == S(0) ? S(0) : S(1) / an[j];
    gsc.col(j) = g.col(j) * inv;
  }
  for (int i = 0; i < n; ++i) {
    if (xn[i] == S(0)) continue;
    S inv_x = S(1) / xn[i];
    S dot_gz = g.row(i).cwiseProduct(z.row(i)).sum();
    dxm.row(i).noalias() += inv_x * (gsc.row(i) * am);
    dxm.row(i).noalias() -= (dot_gz * inv_x * inv_x) * xm.row(i);
  }
}

// Orthogonal init (QR of a Gaussian matrix, signs fixed by R's diagonal),
// scaled by gain. For conv kernels the trailing dims are flattened.
template <typename S>
TensorT<S> orthogonal_init(std::vector<int> shape, double gain, Pcg32& rng) {
  std::int64_t total = TensorT<S>::count(shape);
  int rows = shape[0];
  int cols = static_cast<int>(total / rows);
  int big = std::max(rows, cols), small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (int j = 0; j < small; ++j)
    for (int i = 0; i < big; ++i) g(i, j) = rng.next_gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  Eigen::MatrixXd r = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
  for (int j = 0; j < small; ++j)
    if (r(j, j) < 0) q.col(j) = -q.col(j);
  TensorT<S> t = TensorT<S>::zeros(std::move(shape));
  auto tm = t.mat(rows, cols);
  if (rows <= cols) {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) tm(i, j) = static_cast<S>(gain * q(j, i));
  } else {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) tm(i, j) = static_cast<S>(gain * q(i, j));
  }
  return t;
}

}  // namespace r3l
