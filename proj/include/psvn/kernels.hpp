#pragma once

#include "psvn/common.hpp"

#include <vector>

namespace psvn::kernel {

/// Metric of the Gaussian kernel k(a, b) = exp(-(a-b)^T M (a-b) / 2).
struct KernelMetric {
  Matrix m;
  double divisor = 1.0;  // the dimension the averaged Hessian was divided by

  Index dim() const { return m.rows(); }
};

/// M = (1 / (divisor * N)) sum_n H_n for the negative log-density Hessians H_n
/// (prior identity included). divisor <= 0 means the Hessian dimension.
KernelMetric build_metric(const std::vector<Matrix>& neg_hessians, double divisor = 0.0);
/// Same, from the columns of a stacked (dim x dim*N) block.
KernelMetric build_metric_stacked(const Matrix& stacked, double divisor = 0.0);

KernelMetric scaled_identity(Index dim, double alpha);
/// alpha I with alpha = 2 log(N) / med^2, med the median pairwise Euclidean
/// distance of the columns (alpha = 1 when N < 2 or all points coincide).
KernelMetric median_heuristic(const Matrix& points);

/// Kernel values and gradients. Row m refers to the evaluation point
/// rows[m]; column n to the center n of `centers`.
struct KernelTable {
  Matrix values;                 // R x N, values(m, n) = k(x_m, x_n)
  std::vector<Matrix> gradients; // R entries of dim x N: grad_x k(x, x_n) at x = x_m
};

/// Full table over a point set (columns). Exponents are evaluated from the
/// difference vectors, so k(a, b) == k(b, a) bit for bit and k(a, a) == 1.
KernelTable evaluate_kernel_table(const KernelMetric& metric, const Matrix& points);
/// Rows [row_begin, row_begin + row_count) of the full table.
KernelTable evaluate_kernel_rows(const KernelMetric& metric, const Matrix& points, Index row_begin,
                                 Index row_count, bool with_gradients = true);

/// Kernel values only, via the Gram expansion |a|_M^2 + |b|_M^2 - 2 a^T M b, for
/// large dimensions. Exponents are clamped at 0, the result is symmetrized and
/// the diagonal set to 1.
Matrix kernel_values_gram(const KernelMetric& metric, const Matrix& points);

}  // namespace psvn::kernel
