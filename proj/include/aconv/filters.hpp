#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "aconv/tensor.hpp"

namespace aconv {

struct NamedKernel {
  std::string name;
  Eigen::MatrixXd kernel;
};

Eigen::MatrixXd laplace_kernel();
Eigen::MatrixXd sobel_horizontal();
Eigen::MatrixXd sobel_vertical();
/// size x size samples of exp(-r^2 / (2 sigma^2)) (sigma in pixels), renormalised to sum 1.
Eigen::MatrixXd gauss_kernel(int size, double sigma);

/// Kernel of "smooth, then apply op": the full-padding correlation of `op`
/// with the (symmetric) smoothing kernel. Result is (op + smooth - 1) square.
Eigen::MatrixXd compose_after_smoothing(const Eigen::MatrixXd& op, const Eigen::MatrixXd& smooth);

/// Zero-pads a centred kernel out to size x size.
Eigen::MatrixXd embed_centered(const Eigen::MatrixXd& kernel, int size);

/// The nine target kernels: Laplace, Sobel-h, Sobel-v, Gauss(0.8), Gauss(2.0)
/// and Laplace/Sobel applied after Gaussian smoothing. Every kernel is at most 9x9.
std::vector<NamedKernel> make_filter_bank();

/// Centred delta on a size x size grid.
Eigen::MatrixXd identity_kernel(int size);

/// Pearson correlation of two equally sized kernels.
double normalized_cross_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

Tensord to_tensor_kernel(const Eigen::MatrixXd& k);  // [n,n,1,1]
Eigen::MatrixXd from_tensor_kernel(const Tensord& k, std::size_t channel, std::size_t filter);

}  // namespace aconv
