#pragma once

// Dense kernels with double accumulation and a fixed reduction order.

#include <cmath>
#include <cstddef>
#include <vector>

namespace fxq::nn::kernels {

/// Dot product summed in four interleaved double lanes, then lane 0..3 in order.
template <typename T>
double dot(const T* a, const T* b, std::size_t k) {
  double lane[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) {
    lane[0] += static_cast<double>(a[p]) * b[p];
    lane[1] += static_cast<double>(a[p + 1]) * b[p + 1];
    lane[2] += static_cast<double>(a[p + 2]) * b[p + 2];
    lane[3] += static_cast<double>(a[p + 3]) * b[p + 3];
  }
  for (; p < k; ++p) lane[0] += static_cast<double>(a[p]) * b[p];
  return (lane[0] + lane[1]) + (lane[2] + lane[3]);
}

/// c[m x n] = a[m x k] * b[n x k]^T (+ bias[n] when given).
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k,
               const T* bias = nullptr) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = dot(a + i * k, b + j * k, k);
      if (bias) s += bias[j];
      c[i * n + j] = static_cast<T>(s);
    }
  }
}

/// acc[m x n] += a[m x k] * b[n x k]^T
template <typename T>
void matmul_nt_acc(const T* a, const T* b, double* acc, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) acc[i * n + j] += dot(a + i * k, b + j * k, k);
  }
}

/// c[m x n] = a[m x k] * b[k x n]
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double s = a[i * k + p];
      if (s == 0.0) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = static_cast<T>(row[j]);
  }
}

/// acc[m x n] += a[k x m]^T * b[k x n]
template <typename T>
void matmul_tn_acc(const T* a, const T* b, double* acc, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = arow[i];
      if (s == 0.0) continue;
      double* out = acc + i * n;
      for (std::size_t j = 0; j < n; ++j) out[j] += s * brow[j];
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace fxq::nn::kernels
