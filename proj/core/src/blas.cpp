#include "mrdd/blas.hpp"

#include <cblas.h>

#include <atomic>
#include <functional>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

extern "C" void openblas_set_num_threads(int);

namespace mrdd {

namespace {
std::atomic<int> g_threads{0};

struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }
};
const BlasInit g_blas_init;
}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc) {
  cblas_dgemm(CblasColMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
              ldb, beta, c, ldc);
}

void set_compute_threads(int n) { g_threads.store(n); }

int compute_threads() {
  int n = g_threads.load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void parallel_chunks(int n_chunks, const std::function<void(int)>& fn) {
  int workers = compute_threads();
  if (workers <= 1 || n_chunks <= 1) {
    for (int i = 0; i < n_chunks; ++i) fn(i);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(workers)
  for (int i = 0; i < n_chunks; ++i) fn(i);
#else
  for (int i = 0; i < n_chunks; ++i) fn(i);
#endif
}

}  // namespace mrdd
