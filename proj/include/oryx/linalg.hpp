// Plain-tensor kernels. The autodiff tape wraps these for training; the
// recurrent execution path calls them directly, so both paths share the
// exact same arithmetic.
#pragma once

#include <Eigen/Core>

#include "oryx/tensor.hpp"

namespace oryx {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EMat>;
using CMapMat = Eigen::Map<const EMat>;

inline CMapMat as_mat(const Tensor& t) {
  ORYX_REQUIRE_MSG(t.rank() == 2, "expected rank-2 tensor, got " << shape_str(t.shape()));
  return CMapMat(t.data(), t.dim(0), t.dim(1));
}
inline MapMat as_mat(Tensor& t) {
  ORYX_REQUIRE_MSG(t.rank() == 2, "expected rank-2 tensor, got " << shape_str(t.shape()));
  return MapMat(t.data(), t.dim(0), t.dim(1));
}

// C = A(M,K) * B(K,N)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  ORYX_REQUIRE_MSG(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
                   "matmul " << shape_str(a.shape()) << " x " << shape_str(b.shape()));
  Tensor c({a.dim(0), b.dim(1)});
  as_mat(c).noalias() = as_mat(a) * as_mat(b);
  return c;
}

// X(M,N) + bias(N) broadcast over rows
inline Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  ORYX_REQUIRE_MSG(x.rank() == 2 && bias.rank() == 1 && bias.dim(0) == x.dim(1),
                   "bias " << shape_str(bias.shape()) << " vs " << shape_str(x.shape()));
  Tensor y = x;
  const int64_t m = x.dim(0), n = x.dim(1);
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) y[i * n + j] += bias[j];
  return y;
}

inline Tensor relu(const Tensor& x) {
  Tensor y = x;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = y[i] > 0.0 ? y[i] : 0.0;
  return y;
}

inline constexpr double kNormEps = 1e-6;

// Per-row RMS norm with learned gain: y = gain * x / sqrt(mean(x^2)+eps)
inline Tensor rms_norm_rows(const Tensor& x, const Tensor& gain) {
  ORYX_REQUIRE(x.rank() == 2 && gain.rank() == 1 && gain.dim(0) == x.dim(1));
  const int64_t m = x.dim(0), n = x.dim(1);
  Tensor y(x.shape());
  for (int64_t i = 0; i < m; ++i) {
    const double* xr = x.data() + i * n;
    double ms = 0.0;
    for (int64_t j = 0; j < n; ++j) ms += xr[j] * xr[j];
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(n) + kNormEps);
    for (int64_t j = 0; j < n; ++j) y[i * n + j] = gain[j] * xr[j] * inv;
  }
  return y;
}

// Group-norm over per-head segments of each row, learned per-channel gain.
// heads must divide the column count.
inline Tensor head_norm_rows(const Tensor& x, const Tensor& gain, int64_t heads) {
  ORYX_REQUIRE(x.rank() == 2 && gain.rank() == 1 && gain.dim(0) == x.dim(1));
  ORYX_REQUIRE(heads >= 1 && x.dim(1) % heads == 0);
  const int64_t m = x.dim(0), n = x.dim(1), d = n / heads;
  Tensor y(x.shape());
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t h = 0; h < heads; ++h) {
      const double* xs = x.data() + i * n + h * d;
      double mu = 0.0;
      for (int64_t j = 0; j < d; ++j) mu += xs[j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (int64_t j = 0; j < d; ++j) var += (xs[j] - mu) * (xs[j] - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + kNormEps);
      for (int64_t j = 0; j < d; ++j)
        y[i * n + h * d + j] = gain[h * d + j] * (xs[j] - mu) * inv;
    }
  }
  return y;
}

// Row-wise softmax, numerically stabilised.
inline Tensor softmax_rows(const Tensor& x) {
  ORYX_REQUIRE(x.rank() == 2);
  const int64_t m = x.dim(0), n = x.dim(1);
  Tensor p(x.shape());
  for (int64_t i = 0; i < m; ++i) {
    const double* xr = x.data() + i * n;
    double mx = xr[0];
    for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      p[i * n + j] = std::exp(xr[j] - mx);
      z += p[i * n + j];
    }
    for (int64_t j = 0; j < n; ++j) p[i * n + j] /= z;
  }
  return p;
}

inline Tensor elementwise_mul(const Tensor& a, const Tensor& b) {
  ORYX_REQUIRE(a.same_shape(b));
  Tensor y = a;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= b[i];
  return y;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  ORYX_REQUIRE(a.same_shape(b));
  Tensor y = a;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += b[i];
  return y;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor y = a;
  for (int64_t i = 0; i < y.numel(); ++i) y[i] *= c;
  return y;
}

}  // namespace oryx
