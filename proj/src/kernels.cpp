#include "settp/kernels.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "settp/error.hpp"

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace settp::kernels {

namespace {

void prepare_output(Matrix& c, std::size_t rows, std::size_t cols, bool accumulate,
                    const char* who) {
  if (!accumulate) {
    c = Matrix(rows, cols);
  } else if (c.rows() != rows || c.cols() != cols) {
    throw Error(ErrorKind::dimension_mismatch, std::string(who) + ": output shape");
  }
}

void check_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.rows()) throw Error(ErrorKind::dimension_mismatch, "gemm_nn: inner dims");
  prepare_output(c, a.rows(), b.cols(), accumulate, "gemm_nn");
}

void check_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.cols() != b.cols()) throw Error(ErrorKind::dimension_mismatch, "gemm_nt: inner dims");
  prepare_output(c, a.rows(), b.rows(), accumulate, "gemm_nt");
}

void check_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() != b.rows()) throw Error(ErrorKind::dimension_mismatch, "gemm_tn: inner dims");
  prepare_output(c, a.cols(), b.cols(), accumulate, "gemm_tn");
}

// Row kernels shared by both variants so the summation order is identical.

inline void nn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k = a.cols(), n = b.cols();
  double* ci = c.data() + i * n;
  const double* ai = a.data() + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t k = a.cols(), n = b.rows();
  const double* ai = a.data() + i * k;
  double* ci = c.data() + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b.data() + j * k;
    double s = 0.0;
    for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
    ci[j] += s;
  }
}

// Row i of C = A^T B is sum over p of A(p, i) * B(p, :).
inline void tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
  const std::size_t m = a.rows(), ka = a.cols(), n = b.cols();
  double* ci = c.data() + i * n;
  for (std::size_t p = 0; p < m; ++p) {
    const double api = a.data()[p * ka + i];
    if (api == 0.0) continue;
    const double* bp = b.data() + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
  }
}

inline void affinity_row(const Matrix& points, Matrix& w, std::size_t i) {
  const std::size_t n = points.rows();
  for (std::size_t j = 0; j < n; ++j) {
    w(i, j) = i == j ? 1.0 : 1.0 / (1.0 + l2_distance(points.row(i), points.row(j)));
  }
}

inline std::size_t nearest_one(const Matrix& centroids, std::span<const double> query) {
  if (centroids.rows() == 0) throw Error(ErrorKind::invalid_argument, "nearest: empty centroid set");
  if (centroids.cols() != query.size()) {
    throw Error(ErrorKind::dimension_mismatch, "nearest: query dimension");
  }
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < centroids.rows(); ++r) {
    const double d = squared_l2_distance(centroids.row(r), query);
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return best;
}

}  // namespace

bool openmp_enabled() {
#if defined(_OPENMP)
  return true;
#else
  return false;
#endif
}

namespace serial {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_nn(a, b, c, accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i) nn_row(a, b, c, i);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_nt(a, b, c, accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i) nt_row(a, b, c, i);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_tn(a, b, c, accumulate);
  for (std::size_t i = 0; i < a.cols(); ++i) tn_row(a, b, c, i);
}

Matrix affinity(const Matrix& points) {
  Matrix w(points.rows(), points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) affinity_row(points, w, i);
  return w;
}

std::vector<std::size_t> nearest_rows(const Matrix& centroids, const Matrix& queries) {
  std::vector<std::size_t> out(queries.rows());
  for (std::size_t q = 0; q < queries.rows(); ++q) out[q] = nearest_one(centroids, queries.row(q));
  return out;
}

}  // namespace serial

namespace omp {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_nn(a, b, c, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) nn_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_nt(a, b, c, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) nt_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check_tn(a, b, c, accumulate);
  const auto rows = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < rows; ++i) tn_row(a, b, c, static_cast<std::size_t>(i));
}

Matrix affinity(const Matrix& points) {
  Matrix w(points.rows(), points.rows());
  const auto n = static_cast<std::ptrdiff_t>(points.rows());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t i = 0; i < n; ++i) affinity_row(points, w, static_cast<std::size_t>(i));
  return w;
}

std::vector<std::size_t> nearest_rows(const Matrix& centroids, const Matrix& queries) {
  std::vector<std::size_t> out(queries.rows());
  const auto n = static_cast<std::ptrdiff_t>(queries.rows());
  // Validate once up front so no exception escapes the parallel region.
  if (n > 0) (void)nearest_one(centroids, queries.row(0));
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t q = 0; q < n; ++q) {
    out[static_cast<std::size_t>(q)] = nearest_one(centroids, queries.row(static_cast<std::size_t>(q)));
  }
  return out;
}

}  // namespace omp

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() * a.cols() * b.cols() >= kParallelThreshold) return omp::gemm_nn(a, b, c, accumulate);
  serial::gemm_nn(a, b, c, accumulate);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() * a.cols() * b.rows() >= kParallelThreshold) return omp::gemm_nt(a, b, c, accumulate);
  serial::gemm_nt(a, b, c, accumulate);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  if (a.rows() * a.cols() * b.cols() >= kParallelThreshold) return omp::gemm_tn(a, b, c, accumulate);
  serial::gemm_tn(a, b, c, accumulate);
}

Matrix affinity(const Matrix& points) {
  const std::size_t n = points.rows();
  if (n * n * points.cols() >= kParallelThreshold) return omp::affinity(points);
  return serial::affinity(points);
}

std::size_t nearest_row(const Matrix& centroids, std::span<const double> query) {
  return nearest_one(centroids, query);
}

std::vector<std::size_t> nearest_rows(const Matrix& centroids, const Matrix& queries) {
  if (queries.rows() * centroids.rows() * centroids.cols() >= kParallelThreshold) {
    return omp::nearest_rows(centroids, queries);
  }
  return serial::nearest_rows(centroids, queries);
}

}  // namespace settp::kernels
