#pragma once

// Data-parallel kernels used by the backbone, clustering, and retrieval.
//
// Every kernel has a serial reference in `kernels::serial` and an OpenMP
// variant in `kernels::omp`. Both compute each output element with the same
// summation order, so their results are bit-identical; the unit tests rely on
// that. The unqualified entry points dispatch to the OpenMP variant once the
// problem is large enough to amortize the fork/join.

#include <cstddef>
#include <span>
#include <vector>

#include "settp/matrix.hpp"

namespace settp::kernels {

/// C (+)= A * B
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
/// C (+)= A * B^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
/// C (+)= A^T * B
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

/// W_ij = 1 / (1 + ||p_i - p_j||) over the rows of `points`.
Matrix affinity(const Matrix& points);

/// Index of the row of `centroids` nearest (L2) to `query`; lowest index on ties.
std::size_t nearest_row(const Matrix& centroids, std::span<const double> query);
/// nearest_row for every row of `queries`.
std::vector<std::size_t> nearest_rows(const Matrix& centroids, const Matrix& queries);

/// Work threshold (multiply-adds) above which the dispatchers go parallel.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

bool openmp_enabled();

namespace serial {
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
Matrix affinity(const Matrix& points);
std::vector<std::size_t> nearest_rows(const Matrix& centroids, const Matrix& queries);
}  // namespace serial

namespace omp {
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate);
Matrix affinity(const Matrix& points);
std::vector<std::size_t> nearest_rows(const Matrix& centroids, const Matrix& queries);
}  // namespace omp

}  // namespace settp::kernels
