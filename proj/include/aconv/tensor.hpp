#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "aconv/errors.hpp"

namespace aconv {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major N-d array. A default-constructed tensor is empty (rank 0, no data).
template <typename Scalar>
class Tensor {
 public:
  using Scalar_t = Scalar;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  /// Storage starts on a 64-byte boundary so vectorised reductions see the same peeling every run.
  using Storage = std::vector<Scalar, Eigen::aligned_allocator<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, const std::vector<Scalar>& values)
      : shape_(std::move(shape)), data_(values.begin(), values.end()) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                           to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> values() { return data_; }
  std::span<const Scalar> values() const { return data_; }

  template <typename... Idx>
  Scalar& operator()(Idx... idx) {
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const Scalar& operator()(Idx... idx) const {
    return data_[offset(idx...)];
  }

  Scalar& operator[](std::size_t i) { return data_[i]; }
  const Scalar& operator[](std::size_t i) const { return data_[i]; }

  Eigen::Map<Vector> flat() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  Eigen::Map<const Vector> flat() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

  /// Row-major matrix view; rows * cols must equal size().
  Eigen::Map<RowMatrix> matrix(std::size_t rows, std::size_t cols) {
    check_view(rows, cols);
    return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }
  Eigen::Map<const RowMatrix> matrix(std::size_t rows, std::size_t cols) const {
    check_view(rows, cols);
    return {data_.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
  }

  Tensor reshaped(Shape shape) const& {
    Tensor out = *this;
    out.reshape(std::move(shape));
    return out;
  }
  Tensor reshaped(Shape shape) && {
    reshape(std::move(shape));
    return std::move(*this);
  }
  void reshape(Shape shape) {
    check_shape(shape);
    if (shape_size(shape) != data_.size())
      throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
    shape_ = std::move(shape);
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(data_.begin(), data_.end());
    return Tensor<Other>(shape_, std::move(out));
  }

  void set_zero() { std::fill(data_.begin(), data_.end(), Scalar(0)); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor& other) const { return shape_ == other.shape_ && data_ == other.data_; }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + to_string(shape));
  }

  void check_view(std::size_t rows, std::size_t cols) const {
    if (rows * cols != data_.size())
      throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) + " of tensor " +
                           to_string(shape_));
  }

  template <typename... Idx>
  std::size_t offset(Idx... idx) const {
    const std::size_t index[] = {static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t a = 0; a < sizeof...(Idx); ++a) off = off * shape_[a] + index[a];
    return off;
  }

  Shape shape_;
  Storage data_;
};

using Tensord = Tensor<double>;
using Tensorf = Tensor<float>;

enum class Padding { valid, same };

inline std::string to_string(Padding p) { return p == Padding::valid ? "valid" : "same"; }

/// Spatial bookkeeping of one sliding-window pass over an H x W plane.
struct ConvGeometry {
  std::size_t in_h = 0, in_w = 0;
  std::size_t kernel = 0, stride = 1;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t out_h = 0, out_w = 0;

  bool operator==(const ConvGeometry&) const = default;
};

/// "same" pads with zeros symmetrically, the extra pixel going bottom/right.
inline ConvGeometry make_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel, std::size_t stride,
                                  Padding padding) {
  if (stride == 0) throw ArgumentError("stride must be positive");
  if (kernel == 0) throw ArgumentError("kernel size must be positive");
  ConvGeometry g{in_h, in_w, kernel, stride, 0, 0, 0, 0};
  auto axis = [&](std::size_t in, std::size_t& pad_before, std::size_t& out) {
    if (padding == Padding::valid) {
      if (kernel > in)
        throw DimensionError("kernel " + std::to_string(kernel) + " exceeds input extent " + std::to_string(in));
      out = (in - kernel) / stride + 1;
      pad_before = 0;
    } else {
      out = (in + stride - 1) / stride;
      const std::size_t needed = (out - 1) * stride + kernel;
      const std::size_t total = needed > in ? needed - in : 0;
      if (kernel > in + total)
        throw DimensionError("kernel " + std::to_string(kernel) + " exceeds padded extent");
      pad_before = total / 2;
    }
  };
  axis(in_h, g.pad_top, g.out_h);
  axis(in_w, g.pad_left, g.out_w);
  return g;
}

/// Windowed weighted sum of X[H,W,C] against K[n,n,C,Q], no kernel flip.
/// Sums run over (k, l, c) in that order; out-of-image taps are skipped.
template <typename Scalar>
Tensor<Scalar> cross_correlate(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel, std::size_t stride = 1,
                               Padding padding = Padding::valid) {
  if (x.rank() != 3) throw DimensionError("cross_correlate expects X[H,W,C], got " + to_string(x.shape()));
  if (kernel.rank() != 4 || kernel.dim(0) != kernel.dim(1))
    throw DimensionError("cross_correlate expects square K[n,n,C,Q], got " + to_string(kernel.shape()));
  if (kernel.dim(2) != x.dim(2))
    throw DimensionError("channel mismatch between X " + to_string(x.shape()) + " and K " +
                         to_string(kernel.shape()));
  const auto g = make_geometry(x.dim(0), x.dim(1), kernel.dim(0), stride, padding);
  const std::size_t n = g.kernel, channels = x.dim(2), filters = kernel.dim(3);
  Tensor<Scalar> out({g.out_h, g.out_w, filters});
  for (std::size_t i = 0; i < g.out_h; ++i) {
    for (std::size_t j = 0; j < g.out_w; ++j) {
      for (std::size_t q = 0; q < filters; ++q) {
        Scalar acc = 0;
        for (std::size_t k = 0; k < n; ++k) {
          const auto row = static_cast<std::ptrdiff_t>(i * stride + k) - static_cast<std::ptrdiff_t>(g.pad_top);
          if (row < 0 || row >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          for (std::size_t l = 0; l < n; ++l) {
            const auto col =
                static_cast<std::ptrdiff_t>(j * stride + l) - static_cast<std::ptrdiff_t>(g.pad_left);
            if (col < 0 || col >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            for (std::size_t c = 0; c < channels; ++c) acc += x(row, col, c) * kernel(k, l, c, q);
          }
        }
        out(i, j, q) = acc;
      }
    }
  }
  return out;
}

/// Hadamard product with left-aligned broadcasting: missing trailing dims and
/// size-1 dims of either operand are repeated, so an n x n envelope multiplies
/// every channel/filter slice of an n x n x C x Q weight tensor.
template <typename Scalar>
Tensor<Scalar> elementwise_multiply(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const std::size_t rank = std::max(a.rank(), b.rank());
  Shape sa = a.shape(), sb = b.shape(), so(rank);
  sa.resize(rank, 1);
  sb.resize(rank, 1);
  for (std::size_t d = 0; d < rank; ++d) {
    if (sa[d] != sb[d] && sa[d] != 1 && sb[d] != 1)
      throw DimensionError("cannot broadcast " + to_string(a.shape()) + " with " + to_string(b.shape()));
    so[d] = std::max(sa[d], sb[d]);
  }
  Tensor<Scalar> out(so);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t flat = 0; flat < out.size(); ++flat) {
    std::size_t ia = 0, ib = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      ia = ia * sa[d] + (sa[d] == 1 ? 0 : idx[d]);
      ib = ib * sb[d] + (sb[d] == 1 ? 0 : idx[d]);
    }
    out[flat] = a[ia] * b[ib];
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < so[d]) break;
      idx[d] = 0;
    }
  }
  return out;
}

/// Mean over positions of the unbiased per-position variance. The last axis
/// holds the samples; every other axis indexes a position (e.g. [n,n,S]).
template <typename Scalar>
double mvar(const Tensor<Scalar>& samples) {
  if (samples.rank() < 2) throw DimensionError("mvar expects [positions..., S], got " + to_string(samples.shape()));
  const std::size_t count = samples.shape().back();
  if (count < 2) throw ArgumentError("mvar needs at least two samples per position");
  const std::size_t positions = samples.size() / count;
  double total = 0;
  for (std::size_t p = 0; p < positions; ++p) {
    const Scalar* row = samples.data() + p * count;
    double mean = 0;
    for (std::size_t s = 0; s < count; ++s) mean += row[s];
    mean /= static_cast<double>(count);
    double ss = 0;
    for (std::size_t s = 0; s < count; ++s) ss += (row[s] - mean) * (row[s] - mean);
    total += ss / static_cast<double>(count - 1);
  }
  return total / static_cast<double>(positions);
}

}  // namespace aconv
