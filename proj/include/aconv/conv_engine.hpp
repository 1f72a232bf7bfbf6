#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "aconv/tensor.hpp"

namespace aconv::detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Unfolds one HWC image into a (out_h*out_w) x (n*n*C) patch matrix whose
/// column order (k, l, c) matches a row-major [n,n,C,Q] kernel viewed as (n*n*C) x Q.
template <typename Scalar>
void im2col(const Scalar* image, const ConvGeometry& g, std::size_t channels, Scalar* cols) {
  const std::size_t n = g.kernel;
  const std::size_t width = n * n * channels;
  for (std::size_t i = 0; i < g.out_h; ++i) {
    for (std::size_t j = 0; j < g.out_w; ++j) {
      Scalar* dst = cols + (i * g.out_w + j) * width;
      for (std::size_t k = 0; k < n; ++k) {
        const auto row = static_cast<std::ptrdiff_t>(i * g.stride + k) - static_cast<std::ptrdiff_t>(g.pad_top);
        for (std::size_t l = 0; l < n; ++l, dst += channels) {
          const auto col = static_cast<std::ptrdiff_t>(j * g.stride + l) - static_cast<std::ptrdiff_t>(g.pad_left);
          if (row < 0 || col < 0 || row >= static_cast<std::ptrdiff_t>(g.in_h) ||
              col >= static_cast<std::ptrdiff_t>(g.in_w)) {
            std::fill(dst, dst + channels, Scalar(0));
          } else {
            const Scalar* src = image + (static_cast<std::size_t>(row) * g.in_w + static_cast<std::size_t>(col)) * channels;
            std::copy(src, src + channels, dst);
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatter-adds patch gradients back onto the image.
template <typename Scalar>
void col2im_add(const Scalar* cols, const ConvGeometry& g, std::size_t channels, Scalar* image) {
  const std::size_t n = g.kernel;
  const std::size_t width = n * n * channels;
  for (std::size_t i = 0; i < g.out_h; ++i) {
    for (std::size_t j = 0; j < g.out_w; ++j) {
      const Scalar* src = cols + (i * g.out_w + j) * width;
      for (std::size_t k = 0; k < n; ++k) {
        const auto row = static_cast<std::ptrdiff_t>(i * g.stride + k) - static_cast<std::ptrdiff_t>(g.pad_top);
        for (std::size_t l = 0; l < n; ++l, src += channels) {
          const auto col = static_cast<std::ptrdiff_t>(j * g.stride + l) - static_cast<std::ptrdiff_t>(g.pad_left);
          if (row < 0 || col < 0 || row >= static_cast<std::ptrdiff_t>(g.in_h) ||
              col >= static_cast<std::ptrdiff_t>(g.in_w))
            continue;
          Scalar* dst = image + (static_cast<std::size_t>(row) * g.in_w + static_cast<std::size_t>(col)) * channels;
          for (std::size_t c = 0; c < channels; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

/// Batched NHWC correlation with a (n*n*C) x Q kernel matrix, one GEMM per image.
template <typename Scalar>
class ConvEngine {
 public:
  ConvEngine() = default;
  ConvEngine(const ConvGeometry& g, std::size_t channels, std::size_t filters)
      : geometry_(g), channels_(channels), filters_(filters) {}

  const ConvGeometry& geometry() const { return geometry_; }
  /// Keeps the scratch buffers when the problem shape is unchanged.
  void configure(const ConvGeometry& g, std::size_t channels, std::size_t filters) {
    geometry_ = g;
    channels_ = channels;
    filters_ = filters;
  }
  std::size_t patch_width() const { return geometry_.kernel * geometry_.kernel * channels_; }
  std::size_t positions() const { return geometry_.out_h * geometry_.out_w; }

  /// out[N, out_h, out_w, Q] = x * kernel (+ bias when non-null).
  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Scalar* bias) {
    const std::size_t batch = x.dim(0);
    Tensor<Scalar> out({batch, geometry_.out_h, geometry_.out_w, filters_});
    const ConstMatrixMap<Scalar> k(kernel.data(), patch_width(), filters_);
    cols_.resize(positions() * patch_width());
    const std::size_t in_stride = geometry_.in_h * geometry_.in_w * channels_;
    for (std::size_t b = 0; b < batch; ++b) {
      im2col(x.data() + b * in_stride, geometry_, channels_, cols_.data());
      const ConstMatrixMap<Scalar> cols(cols_.data(), positions(), patch_width());
      MatrixMap<Scalar> o(out.data() + b * positions() * filters_, positions(), filters_);
      o.noalias() = cols * k;
      if (bias) o.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(bias, filters_);
    }
    return out;
  }

  /// Gradient of the correlated kernel (dkernel, accumulated over the batch in
  /// index order), of the bias (dbias may be null) and of the input.
  Tensor<Scalar> backward(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, const Tensor<Scalar>& dout,
                          Tensor<Scalar>& dkernel, Scalar* dbias) {
    const std::size_t batch = x.dim(0);
    Tensor<Scalar> dx(x.shape());
    dkernel = Tensor<Scalar>(kernel.shape());
    const ConstMatrixMap<Scalar> k(kernel.data(), patch_width(), filters_);
    MatrixMap<Scalar> dk(dkernel.data(), patch_width(), filters_);
    if (dbias) std::fill(dbias, dbias + filters_, Scalar(0));
    cols_.resize(positions() * patch_width());
    dcols_.resize(positions() * patch_width());
    const std::size_t in_stride = geometry_.in_h * geometry_.in_w * channels_;
    for (std::size_t b = 0; b < batch; ++b) {
      im2col(x.data() + b * in_stride, geometry_, channels_, cols_.data());
      const ConstMatrixMap<Scalar> cols(cols_.data(), positions(), patch_width());
      const ConstMatrixMap<Scalar> d(dout.data() + b * positions() * filters_, positions(), filters_);
      dk.noalias() += cols.transpose() * d;
      MatrixMap<Scalar> dc(dcols_.data(), positions(), patch_width());
      dc.noalias() = d * k.transpose();
      col2im_add(dcols_.data(), geometry_, channels_, dx.data() + b * in_stride);
      if (dbias) {
        const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> sums = d.colwise().sum();
        for (std::size_t q = 0; q < filters_; ++q) dbias[q] += sums[q];
      }
    }
    return dx;
  }

 private:
  ConvGeometry geometry_;
  std::size_t channels_ = 0;
  std::size_t filters_ = 0;
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> cols_;
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> dcols_;
};

}  // namespace aconv::detail
