#pragma once

#include <cstddef>
#include <span>

// Dense row-major kernels behind the autodiff operators.
//
// `parallel` is what the library runs: OpenMP over output rows, so every
// output element is produced by exactly one thread in a fixed summation
// order and results do not depend on the thread count. `reference` is a
// plain serial transcription of the same math, kept for tests and for the
// benchmark comparison.
namespace propfly::kernels {

namespace reference {
// c[m x n] = a[m x k] * b[k x n]
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
// c[m x k] += g[m x n] * b[k x n]^T
void matmul_acc_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
// c[k x n] += a[m x k]^T * g[m x n]
void matmul_acc_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void gelu(std::span<const double> x, std::span<double> y);
// gx += gy * gelu'(x)
void gelu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx);
}  // namespace reference

namespace parallel {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_acc_nt(std::span<const double> g, std::span<const double> b, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void matmul_acc_tn(std::span<const double> a, std::span<const double> g, std::span<double> c,
                   std::size_t m, std::size_t k, std::size_t n);
void gelu(std::span<const double> x, std::span<double> y);
void gelu_backward(std::span<const double> x, std::span<const double> gy, std::span<double> gx);
}  // namespace parallel

// Exact-erf GELU and its derivative, shared by both kernel families.
double gelu_scalar(double x);
double gelu_grad_scalar(double x);

// Work size (multiply-adds) below which the parallel kernels stay serial.
inline constexpr std::size_t kParallelThreshold = std::size_t{1} << 16;

}  // namespace propfly::kernels
