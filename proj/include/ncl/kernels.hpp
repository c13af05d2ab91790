#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

// Data-parallel inner loops used by the layers, optimizers and EMA updates.
// Each variant is a table of function pointers; the scalar table is the
// reference the vector tables are equivalence-tested against.
namespace ncl::kernels {

struct KernelTable {
  std::string_view name;

  double (*dot)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // target = m * target + (1 - m) * source
  void (*ema)(double* target, const double* source, double m, std::size_t n);

  // C[m x n] = beta * C + A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, double beta);
  // C[m x n] = beta * C + A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, double beta);
  // C[m x n] = beta * C + A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c, double beta);

  void (*relu)(const double* in, double* out, std::size_t n);
  // grad_in = grad_out where out > 0, else 0
  void (*relu_backward)(const double* out, const double* grad_out, double* grad_in, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const KernelTable* avx2_table();

// Tables usable on this machine, scalar first.
std::vector<const KernelTable*> available_tables();

// The table in use. Chosen once: NCL_KERNELS=scalar|avx2 overrides detection.
const KernelTable& active();

// Force a table by name ("scalar", "avx2"); returns false if unavailable.
bool select(std::string_view name);

}  // namespace ncl::kernels
