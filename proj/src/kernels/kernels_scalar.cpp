#include "kernels_impl.hpp"

namespace ncl::kernels::scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void ema(double* target, const double* source, double m, std::size_t n) {
  const double keep = 1.0 - m;
  for (std::size_t i = 0; i < n; ++i) target[i] = m * target[i] + keep * source[i];
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[j * k + p];
      c[i * n + j] = (beta == 0.0 ? 0.0 : beta * c[i * n + j]) + sum;
    }
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * k + p] * b[p * n + j];
      c[i * n + j] = (beta == 0.0 ? 0.0 : beta * c[i * n + j]) + sum;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[p * m + i] * b[p * n + j];
      c[i * n + j] = (beta == 0.0 ? 0.0 : beta * c[i * n + j]) + sum;
    }
  }
}

void relu(const double* in, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const double* out, const double* grad_out, double* grad_in, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) grad_in[i] = out[i] > 0.0 ? grad_out[i] : 0.0;
}

const KernelTable kTable{
    "scalar", dot, axpy, ema, gemm_nt, gemm_nn, gemm_tn, relu, relu_backward,
};

}  // namespace ncl::kernels::scalar
