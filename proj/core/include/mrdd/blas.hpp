#ifndef MRDD_BLAS_HPP
#define MRDD_BLAS_HPP

#include <cstddef>
#include <functional>

namespace mrdd {

/// Column-major GEMM: C = alpha * op(A) * op(B) + beta * C.
/// Backed by a serial BLAS call; concurrency is managed by the callers,
/// which keeps results independent of the thread count.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
          const double* a, int lda, const double* b, int ldb, double beta,
          double* c, int ldc);

/// Set the worker thread count used by parallel_chunks (0 = hardware).
void set_compute_threads(int n);
int compute_threads();

/// Run fn(chunk_index) for chunk_index in [0, n_chunks). Chunks are
/// distributed over worker threads; any cross-chunk reduction must be done
/// by the caller in fixed chunk order so results do not depend on timing.
void parallel_chunks(int n_chunks, const std::function<void(int)>& fn);

}  // namespace mrdd

#endif
