#include "aconv/filters.hpp"

#include <cmath>

#include "aconv/errors.hpp"

namespace aconv {

Eigen::MatrixXd laplace_kernel() {
  Eigen::MatrixXd k(3, 3);
  k << 0, 1, 0, 1, -4, 1, 0, 1, 0;
  return k;
}

Eigen::MatrixXd sobel_horizontal() {
  Eigen::MatrixXd k(3, 3);
  k << -1, 0, 1, -2, 0, 2, -1, 0, 1;
  return k;
}

Eigen::MatrixXd sobel_vertical() { return sobel_horizontal().transpose(); }

Eigen::MatrixXd gauss_kernel(int size, double sigma) {
  if (size <= 0 || !(sigma > 0)) throw ArgumentError("gauss kernel needs positive size and sigma");
  const double c = 0.5 * (size - 1);
  Eigen::MatrixXd k(size, size);
  for (int i = 0; i < size; ++i)
    for (int j = 0; j < size; ++j) k(i, j) = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
  return k / k.sum();
}

Eigen::MatrixXd compose_after_smoothing(const Eigen::MatrixXd& op, const Eigen::MatrixXd& smooth) {
  const Eigen::Index pad = smooth.rows() - 1;
  const Eigen::Index out = op.rows() + smooth.rows() - 1;
  Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(op.rows() + 2 * pad, op.cols() + 2 * pad);
  padded.block(pad, pad, op.rows(), op.cols()) = op;
  Eigen::MatrixXd result(out, out);
  for (Eigen::Index i = 0; i < out; ++i)
    for (Eigen::Index j = 0; j < out; ++j)
      result(i, j) = (padded.block(i, j, smooth.rows(), smooth.cols()).array() * smooth.array()).sum();
  return result;
}

Eigen::MatrixXd embed_centered(const Eigen::MatrixXd& kernel, int size) {
  if (kernel.rows() > size || (size - kernel.rows()) % 2 != 0)
    throw DimensionError("cannot centre a " + std::to_string(kernel.rows()) + "x kernel in " + std::to_string(size));
  const Eigen::Index off = (size - kernel.rows()) / 2;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(size, size);
  out.block(off, off, kernel.rows(), kernel.cols()) = kernel;
  return out;
}

std::vector<NamedKernel> make_filter_bank() {
  const auto smooth_narrow = gauss_kernel(7, 0.8);
  const auto smooth_wide = gauss_kernel(7, 2.0);
  return {
      {"laplace", laplace_kernel()},
      {"sobel_h", sobel_horizontal()},
      {"sobel_v", sobel_vertical()},
      {"gauss_0.8", gauss_kernel(9, 0.8)},
      {"gauss_2.0", gauss_kernel(9, 2.0)},
      {"laplace_gauss_0.8", compose_after_smoothing(laplace_kernel(), smooth_narrow)},
      {"sobel_h_gauss_0.8", compose_after_smoothing(sobel_horizontal(), smooth_narrow)},
      {"sobel_v_gauss_0.8", compose_after_smoothing(sobel_vertical(), smooth_narrow)},
      {"laplace_gauss_2.0", compose_after_smoothing(laplace_kernel(), smooth_wide)},
  };
}

Eigen::MatrixXd identity_kernel(int size) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(size, size);
  k(size / 2, size / 2) = 1.0;
  return k;
}

double normalized_cross_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("kernel sizes differ");
  const Eigen::ArrayXXd da = a.array() - a.mean(), db = b.array() - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  return denom > 0 ? (da * db).sum() / denom : 0.0;
}

Tensord to_tensor_kernel(const Eigen::MatrixXd& k) {
  const auto n = static_cast<std::size_t>(k.rows());
  Tensord out({n, n, 1, 1});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j, 0, 0) = k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return out;
}

Eigen::MatrixXd from_tensor_kernel(const Tensord& k, std::size_t channel, std::size_t filter) {
  const auto n = static_cast<Eigen::Index>(k.dim(0));
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      out(i, j) = k(static_cast<std::size_t>(i), static_cast<std::size_t>(j), channel, filter);
  return out;
}

}  // namespace aconv
