#include <immintrin.h>

#include "kernels_impl.hpp"

namespace ncl::kernels::avx2 {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d pair = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(pair, _mm_unpackhi_pd(pair, pair)));
}

inline double scaled(double beta, double c) { return beta == 0.0 ? 0.0 : beta * c; }

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double sum = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum += a[i] * b[i];
  return sum;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void ema(double* target, const double* source, double m, std::size_t n) {
  const double keep = 1.0 - m;
  const __m256d vm = _mm256_set1_pd(m);
  const __m256d vk = _mm256_set1_pd(keep);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_mul_pd(vm, _mm256_loadu_pd(target + i));
    const __m256d s = _mm256_mul_pd(vk, _mm256_loadu_pd(source + i));
    _mm256_storeu_pd(target + i, _mm256_add_pd(t, s));
  }
  for (; i < n; ++i) target[i] = m * target[i] + keep * source[i];
}

// Four output columns at a time, each a dot product along k.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + (j + 0) * k;
      const double* b1 = b + (j + 1) * k;
      const double* b2 = b + (j + 2) * k;
      const double* b3 = b + (j + 3) * k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(arow + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 += arow[p] * b0[p];
        r1 += arow[p] * b1[p];
        r2 += arow[p] * b2[p];
        r3 += arow[p] * b3[p];
      }
      double* crow = c + i * n + j;
      crow[0] = scaled(beta, crow[0]) + r0;
      crow[1] = scaled(beta, crow[1]) + r1;
      crow[2] = scaled(beta, crow[2]) + r2;
      crow[3] = scaled(beta, crow[3]) + r3;
    }
    for (; j < n; ++j) c[i * n + j] = scaled(beta, c[i * n + j]) + dot(arow, b + j * k, k);
  }
}

namespace {

// Shared body of gemm_nn / gemm_tn: C row i accumulates coef(p) * B[p, :]
// over p, sixteen columns held in registers per pass.
template <class Coef>
void accumulate_rows(std::size_t i, std::size_t n, std::size_t k, Coef coef, const double* b, double* c,
                     double beta) {
  double* crow = c + i * n;
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256d c0, c1, c2, c3;
    if (beta == 0.0) {
      c0 = c1 = c2 = c3 = _mm256_setzero_pd();
    } else {
      const __m256d vb = _mm256_set1_pd(beta);
      c0 = _mm256_mul_pd(vb, _mm256_loadu_pd(crow + j));
      c1 = _mm256_mul_pd(vb, _mm256_loadu_pd(crow + j + 4));
      c2 = _mm256_mul_pd(vb, _mm256_loadu_pd(crow + j + 8));
      c3 = _mm256_mul_pd(vb, _mm256_loadu_pd(crow + j + 12));
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(coef(p));
      const double* brow = b + p * n + j;
      c0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow), c0);
      c1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 4), c1);
      c2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 8), c2);
      c3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 12), c3);
    }
    _mm256_storeu_pd(crow + j, c0);
    _mm256_storeu_pd(crow + j + 4, c1);
    _mm256_storeu_pd(crow + j + 8, c2);
    _mm256_storeu_pd(crow + j + 12, c3);
  }
  for (; j + 4 <= n; j += 4) {
    __m256d c0 = beta == 0.0 ? _mm256_setzero_pd() : _mm256_mul_pd(_mm256_set1_pd(beta), _mm256_loadu_pd(crow + j));
    for (std::size_t p = 0; p < k; ++p) {
      c0 = _mm256_fmadd_pd(_mm256_set1_pd(coef(p)), _mm256_loadu_pd(b + p * n + j), c0);
    }
    _mm256_storeu_pd(crow + j, c0);
  }
  for (; j < n; ++j) {
    double sum = 0.0;
    for (std::size_t p = 0; p < k; ++p) sum += coef(p) * b[p * n + j];
    crow[j] = scaled(beta, crow[j]) + sum;
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    accumulate_rows(i, n, k, [arow](std::size_t p) { return arow[p]; }, b, c, beta);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c,
             double beta) {
  for (std::size_t i = 0; i < m; ++i) {
    accumulate_rows(i, n, k, [a, m, i](std::size_t p) { return a[p * m + i]; }, b, c, beta);
  }
}

void relu(const double* in, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(in + i), zero));
  for (; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(const double* out, const double* grad_out, double* grad_in, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(out + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(grad_in + i, _mm256_and_pd(mask, _mm256_loadu_pd(grad_out + i)));
  }
  for (; i < n; ++i) grad_in[i] = out[i] > 0.0 ? grad_out[i] : 0.0;
}

const KernelTable kTable{
    "avx2", dot, axpy, ema, gemm_nt, gemm_nn, gemm_tn, relu, relu_backward,
};

}  // namespace ncl::kernels::avx2
