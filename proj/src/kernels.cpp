#include "psvn/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace psvn::kernel {

KernelMetric build_metric(const std::vector<Matrix>& neg_hessians, double divisor) {
  if (neg_hessians.empty()) throw DimensionMismatch("build_metric: no Hessians");
  const Index r = neg_hessians.front().rows();
  Matrix sum = Matrix::Zero(r, r);
  for (const Matrix& h : neg_hessians) {
    require_dim(h.rows() == r && h.cols() == r, "build_metric: Hessians differ in dimension");
    sum += h;
  }
  KernelMetric km;
  km.divisor = divisor > 0.0 ? divisor : static_cast<double>(r);
  km.m = sum / (km.divisor * static_cast<double>(neg_hessians.size()));
  km.m = 0.5 * (km.m + km.m.transpose()).eval();
  return km;
}

KernelMetric build_metric_stacked(const Matrix& stacked, double divisor) {
  const Index r = stacked.rows();
  require_dim(r > 0 && stacked.cols() % r == 0, "build_metric: stacked block is not dim x dim*N");
  const Index n = stacked.cols() / r;
  Matrix sum = Matrix::Zero(r, r);
  for (Index j = 0; j < n; ++j) sum += stacked.middleCols(j * r, r);
  KernelMetric km;
  km.divisor = divisor > 0.0 ? divisor : static_cast<double>(r);
  km.m = sum / (km.divisor * static_cast<double>(n));
  km.m = 0.5 * (km.m + km.m.transpose()).eval();
  return km;
}

KernelMetric scaled_identity(Index dim, double alpha) {
  if (!(alpha > 0.0)) throw ConfigInvalid("scaled_identity: alpha must be positive");
  KernelMetric km;
  km.m = alpha * Matrix::Identity(dim, dim);
  km.divisor = 1.0;
  return km;
}

KernelMetric median_heuristic(const Matrix& points) {
  const Index n = points.cols();
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index a = 0; a < n; ++a)
    for (Index b = a + 1; b < n; ++b) dist.push_back((points.col(a) - points.col(b)).norm());
  double alpha = 1.0;
  if (!dist.empty()) {
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    double med = *mid;
    if (dist.size() % 2 == 0) {
      med = 0.5 * (med + *std::max_element(dist.begin(), mid));
    }
    if (med > 0.0) alpha = 2.0 * std::log(static_cast<double>(n)) / (med * med);
    if (!(alpha > 0.0)) alpha = 1.0;  // n = 1
  }
  return scaled_identity(points.rows(), alpha);
}

KernelTable evaluate_kernel_rows(const KernelMetric& metric, const Matrix& points, Index row_begin,
                                 Index row_count, bool with_gradients) {
  const Index r = points.rows();
  const Index n = points.cols();
  require_dim(metric.dim() == r, "evaluate_kernel_table: metric dimension does not match points");
  require_dim(row_begin >= 0 && row_count >= 0 && row_begin + row_count <= n,
              "evaluate_kernel_table: row range out of bounds");
  KernelTable t;
  t.values.resize(row_count, n);
  if (with_gradients) t.gradients.assign(static_cast<std::size_t>(row_count), Matrix(r, n));
  Vector delta(r), md(r);
  for (Index i = 0; i < row_count; ++i) {
    const Index m = row_begin + i;
    for (Index j = 0; j < n; ++j) {
      if (j == m) {
        t.values(i, j) = 1.0;
        if (with_gradients) t.gradients[static_cast<std::size_t>(i)].col(j).setZero();
        continue;
      }
      delta = points.col(m) - points.col(j);
      md.noalias() = metric.m * delta;
      const double q = std::max(0.0, delta.dot(md));
      const double k = std::exp(-0.5 * q);
      t.values(i, j) = k;
      if (with_gradients) t.gradients[static_cast<std::size_t>(i)].col(j) = -k * md;
    }
  }
  return t;
}

KernelTable evaluate_kernel_table(const KernelMetric& metric, const Matrix& points) {
  return evaluate_kernel_rows(metric, points, 0, points.cols(), true);
}

Matrix kernel_values_gram(const KernelMetric& metric, const Matrix& points) {
  require_dim(metric.dim() == points.rows(), "kernel_values_gram: metric dimension");
  const Matrix mp = metric.m * points;
  const Matrix gram = points.transpose() * mp;
  const Vector q = gram.diagonal();
  Matrix e = (-0.5) * ((q.replicate(1, points.cols()) + q.transpose().replicate(points.cols(), 1)) -
                       2.0 * gram);
  e = e.cwiseMin(0.0);
  Matrix k = e.array().exp().matrix();
  k = 0.5 * (k + k.transpose()).eval();
  k.diagonal().setOnes();
  return k;
}

}  // namespace psvn::kernel
