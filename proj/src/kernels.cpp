#include "propfly/kernels.hpp"

#include <cmath>
#include <numbers>

namespace propfly::kernels {

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad_scalar(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

namespace reference {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void matmul_acc_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[p * n + j];
      c[i * k + p] += acc;
    }
  }
}

void matmul_acc_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) c[p * n + j] += a[i * k + p] * g[i * n + j];
}

void gelu(std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx) {
  for (std::size_t i = 0; i < x.size(); ++i) gx[i] += gy[i] * gelu_grad_scalar(x[i]);
}

}  // namespace reference

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long i = 0; i < rows; ++i) {
    double* crow = pc + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
    const double* arow = pa + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = pb + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_acc_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const double* pg = g.data();
  const double* pb = b.data();
  double* pc = c.data();
  const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long i = 0; i < rows; ++i) {
    const double* grow = pg + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = pb + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      pc[i * k + p] += acc;
    }
  }
}

void matmul_acc_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n) {
  const double* pa = a.data();
  const double* pg = g.data();
  double* pc = c.data();
  const long out_rows = static_cast<long>(k);
  // Each thread owns whole rows of c; the sum over i runs in a fixed order.
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long p = 0; p < out_rows; ++p) {
    double* crow = pc + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = pa[i * k + p];
      const double* grow = pg + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void gelu(std::span<const double> x, std::span<double> y) {
  const long n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
  for (long i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx) {
  const long n = static_cast<long>(x.size());
#pragma omp parallel for schedule(static) if (x.size() >= kParallelThreshold)
  for (long i = 0; i < n; ++i) gx[i] += gy[i] * gelu_grad_scalar(x[i]);
}

}  // namespace parallel

}  // namespace propfly::kernels
