#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "aconv/conv_engine.hpp"
#include "aconv/envelope.hpp"
#include "aconv/tensor.hpp"

namespace aconv {

// ---------------------------------------------------------------------------
// Adaptive kernel building blocks
// ---------------------------------------------------------------------------

/// Weights W[n,n,C,Q] of an adaptive layer and one aperture per filter.
template <typename Scalar>
struct AdaptiveKernelParams {
  Tensor<Scalar> weights;
  std::vector<Scalar> sigmas;
  EnvelopeGrid grid;

  AdaptiveKernelParams() = default;
  AdaptiveKernelParams(Tensor<Scalar> w, std::vector<Scalar> s) : weights(std::move(w)), sigmas(std::move(s)) {
    if (weights.rank() != 4 || weights.dim(0) != weights.dim(1))
      throw DimensionError("adaptive weights must be [n,n,C,Q], got " + to_string(weights.shape()));
    if (sigmas.size() != weights.dim(3))
      throw DimensionError("need one aperture per filter: " + std::to_string(sigmas.size()) + " vs " +
                           std::to_string(weights.dim(3)));
    grid = make_grid(static_cast<int>(weights.dim(0)));
  }

  std::size_t kernel_size() const { return weights.dim(0); }
  std::size_t channels() const { return weights.dim(2); }
  std::size_t filters() const { return weights.dim(3); }
};

template <typename Scalar>
std::vector<EnvelopeEval> evaluate_envelopes(const EnvelopeGrid& grid, std::span<const Scalar> sigmas,
                                             ScaleDerivative mode = ScaleDerivative::normalized) {
  std::vector<EnvelopeEval> out;
  out.reserve(sigmas.size());
  for (Scalar s : sigmas) out.push_back(envelope(grid, static_cast<double>(s), mode));
  return out;
}

/// W o U_q, with each filter's envelope repeated over the channel axis.
template <typename Scalar>
Tensor<Scalar> apply_envelopes(const Tensor<Scalar>& weights, const std::vector<EnvelopeEval>& envs) {
  const std::size_t n = weights.dim(0), channels = weights.dim(2), filters = weights.dim(3);
  Tensor<Scalar> out(weights.shape());
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t q = 0; q < filters; ++q)
          out(k, l, c, q) = weights(k, l, c, q) * static_cast<Scalar>(envs[q].u(k, l));
  return out;
}

/// Chain rule from the product-kernel gradient G = dE/d(W o U):
/// dW = G o U and dsigma_q = sum_{k,l,c} G * W * du_q/dsigma.
template <typename Scalar>
void envelope_chain_rule(const Tensor<Scalar>& dproduct, const Tensor<Scalar>& weights,
                         const std::vector<EnvelopeEval>& envs, Tensor<Scalar>& dweights,
                         std::vector<Scalar>& dsigmas) {
  const std::size_t n = weights.dim(0), channels = weights.dim(2), filters = weights.dim(3);
  dweights = Tensor<Scalar>(weights.shape());
  std::vector<double> acc(filters, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < n; ++l)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t q = 0; q < filters; ++q) {
          const Scalar g = dproduct(k, l, c, q);
          dweights(k, l, c, q) = g * static_cast<Scalar>(envs[q].u(k, l));
          acc[q] += static_cast<double>(g) * static_cast<double>(weights(k, l, c, q)) * envs[q].du_dsigma(k, l);
        }
  dsigmas.assign(acc.begin(), acc.end());
}

namespace detail {

/// Views an HWC image as a batch of one.
template <typename Scalar>
Tensor<Scalar> as_batch(const Tensor<Scalar>& x) {
  if (x.rank() == 3) return x.reshaped({1, x.dim(0), x.dim(1), x.dim(2)});
  if (x.rank() == 4) return x;
  throw DimensionError("expected X[H,W,C] or X[N,H,W,C], got " + to_string(x.shape()));
}

}  // namespace detail

template <typename Scalar>
struct AdaptiveConvCache {
  Tensor<Scalar> input;  // batched view of the forward input
  Tensor<Scalar> weights;
  Tensor<Scalar> product;
  std::vector<EnvelopeEval> envelopes;
  ConvGeometry geometry;
  Shape output_shape;
  bool batched = false;
};

template <typename Scalar>
struct LayerGradients {
  Tensor<Scalar> dW;
  std::vector<Scalar> dSigmas;
  Tensor<Scalar> dX;
};

/// O = X * (W o U). X is [H,W,C] or [N,H,W,C]; the cache keeps the envelope
/// values and derivatives so the backward pass differentiates exactly what was used.
template <typename Scalar>
std::pair<Tensor<Scalar>, AdaptiveConvCache<Scalar>> aconv_forward(
    const Tensor<Scalar>& x, const AdaptiveKernelParams<Scalar>& params, Padding padding = Padding::valid,
    std::size_t stride = 1, ScaleDerivative mode = ScaleDerivative::normalized) {
  AdaptiveConvCache<Scalar> cache;
  cache.batched = x.rank() == 4;
  cache.input = detail::as_batch(x);
  if (cache.input.dim(3) != params.channels())
    throw DimensionError("input has " + std::to_string(cache.input.dim(3)) + " channels, kernel expects " +
                         std::to_string(params.channels()));
  cache.geometry =
      make_geometry(cache.input.dim(1), cache.input.dim(2), params.kernel_size(), stride, padding);
  cache.weights = params.weights;
  cache.envelopes = evaluate_envelopes<Scalar>(params.grid, params.sigmas, mode);
  cache.product = apply_envelopes(params.weights, cache.envelopes);
  detail::ConvEngine<Scalar> engine(cache.geometry, params.channels(), params.filters());
  Tensor<Scalar> out = engine.forward(cache.input, cache.product, nullptr);
  if (!cache.batched) out.reshape({out.dim(1), out.dim(2), out.dim(3)});
  cache.output_shape = out.shape();
  return {std::move(out), std::move(cache)};
}

template <typename Scalar>
LayerGradients<Scalar> aconv_backward(const Tensor<Scalar>& dout, const AdaptiveConvCache<Scalar>& cache) {
  if (cache.input.empty()) throw StateError("aconv_backward called without a forward cache");
  if (dout.shape() != cache.output_shape)
    throw StateError("upstream gradient " + to_string(dout.shape()) + " does not match cached output " +
                     to_string(cache.output_shape));
  const Tensor<Scalar> d = detail::as_batch(dout);
  detail::ConvEngine<Scalar> engine(cache.geometry, cache.weights.dim(2), cache.weights.dim(3));
  LayerGradients<Scalar> grads;
  Tensor<Scalar> dproduct;
  grads.dX = engine.backward(cache.input, cache.product, d, dproduct, nullptr);
  envelope_chain_rule(dproduct, cache.weights, cache.envelopes, grads.dW, grads.dSigmas);
  if (!cache.batched) grads.dX.reshape({grads.dX.dim(1), grads.dX.dim(2), grads.dX.dim(3)});
  return grads;
}

template <typename Scalar>
struct ConvCache {
  Tensor<Scalar> input;
  Tensor<Scalar> weights;
  ConvGeometry geometry;
  Shape output_shape;
  bool batched = false;
};

template <typename Scalar>
struct ConvGradients {
  Tensor<Scalar> dW;
  Tensor<Scalar> dX;
};

/// Ordinary correlation layer O = X * W.
template <typename Scalar>
std::pair<Tensor<Scalar>, ConvCache<Scalar>> conv_forward(const Tensor<Scalar>& x, const Tensor<Scalar>& weights,
                                                           Padding padding = Padding::valid,
                                                           std::size_t stride = 1) {
  if (weights.rank() != 4 || weights.dim(0) != weights.dim(1))
    throw DimensionError("conv weights must be [n,n,C,Q], got " + to_string(weights.shape()));
  ConvCache<Scalar> cache;
  cache.batched = x.rank() == 4;
  cache.input = detail::as_batch(x);
  if (cache.input.dim(3) != weights.dim(2)) throw DimensionError("conv channel mismatch");
  cache.geometry = make_geometry(cache.input.dim(1), cache.input.dim(2), weights.dim(0), stride, padding);
  cache.weights = weights;
  detail::ConvEngine<Scalar> engine(cache.geometry, weights.dim(2), weights.dim(3));
  Tensor<Scalar> out = engine.forward(cache.input, weights, nullptr);
  if (!cache.batched) out.reshape({out.dim(1), out.dim(2), out.dim(3)});
  cache.output_shape = out.shape();
  return {std::move(out), std::move(cache)};
}

template <typename Scalar>
ConvGradients<Scalar> conv_backward(const Tensor<Scalar>& dout, const ConvCache<Scalar>& cache) {
  if (cache.input.empty()) throw StateError("conv_backward called without a forward cache");
  if (dout.shape() != cache.output_shape) throw StateError("upstream gradient does not match cached output");
  detail::ConvEngine<Scalar> engine(cache.geometry, cache.weights.dim(2), cache.weights.dim(3));
  ConvGradients<Scalar> grads;
  grads.dX = engine.backward(cache.input, cache.weights, detail::as_batch(dout), grads.dW, nullptr);
  if (!cache.batched) grads.dX.reshape({grads.dX.dim(1), grads.dX.dim(2), grads.dX.dim(3)});
  return grads;
}

// ---------------------------------------------------------------------------
// Batched layers
// ---------------------------------------------------------------------------

enum class Mode { train, eval };

enum class ParamRole { weight, bias, aperture, scale, shift, running_mean, running_var };

template <typename Scalar>
struct Parameter {
  std::string name;
  ParamRole role = ParamRole::weight;
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
};

template <typename Scalar>
Parameter<Scalar> make_parameter(std::string name, ParamRole role, Tensor<Scalar> value) {
  Parameter<Scalar> p{std::move(name), role, std::move(value), {}};
  p.grad = Tensor<Scalar>(p.value.shape());
  return p;
}

/// Layers consume and produce batched tensors whose leading axis is the sample index.
template <typename Scalar>
class Layer {
 public:
  explicit Layer(std::string name) : name_(std::move(name)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }

  /// Per-sample output shape given the per-sample input shape.
  virtual Shape output_shape(const Shape& input) const = 0;
  virtual Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) = 0;
  /// Writes parameter gradients and returns dE/dX for the last forward input.
  virtual Tensor<Scalar> backward(const Tensor<Scalar>& dy) = 0;

  /// Trainable parameters, updated by the optimiser.
  virtual std::vector<Parameter<Scalar>*> parameters() { return {}; }
  /// Non-trainable state (running statistics) that belongs in checkpoints.
  virtual std::vector<Parameter<Scalar>*> buffers() { return {}; }

 protected:
  void require_forward(const Tensor<Scalar>& cached) const {
    if (cached.empty()) throw StateError(name_ + ": backward called before forward");
  }

 private:
  std::string name_;
};

template <typename Scalar>
class Conv2D : public Layer<Scalar> {
 public:
  Conv2D(std::string name, Tensor<Scalar> weights, Padding padding = Padding::valid, bool use_bias = true)
      : Layer<Scalar>(std::move(name)), padding_(padding) {
    if (weights.rank() != 4 || weights.dim(0) != weights.dim(1))
      throw DimensionError("conv weights must be [n,n,C,Q]");
    const std::size_t filters = weights.dim(3);
    weights_ = make_parameter(this->name() + ".W", ParamRole::weight, std::move(weights));
    if (use_bias) bias_ = make_parameter(this->name() + ".b", ParamRole::bias, Tensor<Scalar>({filters}));
  }

  Shape output_shape(const Shape& in) const override {
    const auto g = make_geometry(in.at(0), in.at(1), kernel_size(), 1, padding_);
    return {g.out_h, g.out_w, filters()};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    setup(x);
    input_ = x;
    return engine_.forward(x, weights_.value, bias_ptr());
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(input_);
    Tensor<Scalar> dx =
        engine_.backward(input_, weights_.value, dy, weights_.grad, has_bias() ? bias_.grad.data() : nullptr);
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override {
    if (has_bias()) return {&weights_, &bias_};
    return {&weights_};
  }

  std::size_t kernel_size() const { return weights_.value.dim(0); }
  std::size_t filters() const { return weights_.value.dim(3); }
  Parameter<Scalar>& weights() { return weights_; }

 private:
  bool has_bias() const { return !bias_.value.empty(); }
  const Scalar* bias_ptr() const { return has_bias() ? bias_.value.data() : nullptr; }

  void setup(const Tensor<Scalar>& x) {
    if (x.rank() != 4 || x.dim(3) != weights_.value.dim(2))
      throw DimensionError(this->name() + ": expected [N,H,W," + std::to_string(weights_.value.dim(2)) +
                           "] input, got " + to_string(x.shape()));
    const auto g = make_geometry(x.dim(1), x.dim(2), kernel_size(), 1, padding_);
    engine_.configure(g, x.dim(3), filters());
  }

  Padding padding_;
  Parameter<Scalar> weights_;
  Parameter<Scalar> bias_;
  Tensor<Scalar> input_;
  detail::ConvEngine<Scalar> engine_;
};

/// Correlation with W o U where each filter's Gaussian envelope has its own
/// trainable aperture. Envelopes are recomputed only when an aperture changes.
template <typename Scalar>
class AdaptiveConv2D : public Layer<Scalar> {
 public:
  AdaptiveConv2D(std::string name, Tensor<Scalar> weights, std::vector<Scalar> sigmas,
                 Padding padding = Padding::valid, bool use_bias = true,
                 ScaleDerivative mode = ScaleDerivative::normalized)
      : Layer<Scalar>(std::move(name)), padding_(padding), mode_(mode) {
    AdaptiveKernelParams<Scalar> check(weights, sigmas);  // validates the pairing
    grid_ = std::move(check.grid);
    const std::size_t filters = weights.dim(3);
    weights_ = make_parameter(this->name() + ".W", ParamRole::weight, std::move(weights));
    sigmas_ = make_parameter(this->name() + ".sigma", ParamRole::aperture,
                             Tensor<Scalar>({filters}, std::move(sigmas)));
    if (use_bias) bias_ = make_parameter(this->name() + ".b", ParamRole::bias, Tensor<Scalar>({filters}));
  }

  Shape output_shape(const Shape& in) const override {
    const auto g = make_geometry(in.at(0), in.at(1), kernel_size(), 1, padding_);
    return {g.out_h, g.out_w, filters()};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    if (x.rank() != 4 || x.dim(3) != weights_.value.dim(2))
      throw DimensionError(this->name() + ": expected [N,H,W," + std::to_string(weights_.value.dim(2)) +
                           "] input, got " + to_string(x.shape()));
    const auto g = make_geometry(x.dim(1), x.dim(2), kernel_size(), 1, padding_);
    engine_.configure(g, x.dim(3), filters());
    refresh_envelopes();
    forward_envelopes_ = envelopes_;
    product_ = apply_envelopes(weights_.value, envelopes_);
    forward_weights_ = weights_.value;
    input_ = x;
    return engine_.forward(x, product_, has_bias() ? bias_.value.data() : nullptr);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(input_);
    Tensor<Scalar> dproduct;
    Tensor<Scalar> dx =
        engine_.backward(input_, product_, dy, dproduct, has_bias() ? bias_.grad.data() : nullptr);
    std::vector<Scalar> dsig;
    envelope_chain_rule(dproduct, forward_weights_, forward_envelopes_, weights_.grad, dsig);
    std::copy(dsig.begin(), dsig.end(), sigmas_.grad.data());
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override {
    if (has_bias()) return {&weights_, &sigmas_, &bias_};
    return {&weights_, &sigmas_};
  }

  std::size_t kernel_size() const { return weights_.value.dim(0); }
  std::size_t filters() const { return weights_.value.dim(3); }
  std::span<Scalar> sigmas() { return sigmas_.value.values(); }
  std::span<const Scalar> sigmas() const { return sigmas_.value.values(); }
  Parameter<Scalar>& weights() { return weights_; }

  /// Envelopes at the current apertures.
  const std::vector<EnvelopeEval>& envelopes() {
    refresh_envelopes();
    return envelopes_;
  }
  Tensor<Scalar> product_kernel() { return apply_envelopes(weights_.value, envelopes()); }
  /// Number of envelope evaluations performed so far (cache misses per filter).
  std::size_t envelope_evaluations() const { return evaluations_; }

 private:
  bool has_bias() const { return !bias_.value.empty(); }

  void refresh_envelopes() {
    const auto s = sigmas_.value.values();
    if (envelopes_.size() != s.size()) envelopes_.resize(s.size());
    for (std::size_t q = 0; q < s.size(); ++q) {
      const double sigma = static_cast<double>(s[q]);
      if (envelopes_[q].u.size() == 0 || envelopes_[q].sigma != sigma) {
        envelopes_[q] = envelope(grid_, sigma, mode_);
        ++evaluations_;
      }
    }
  }

  Padding padding_;
  ScaleDerivative mode_;
  EnvelopeGrid grid_;
  Parameter<Scalar> weights_;
  Parameter<Scalar> sigmas_;
  Parameter<Scalar> bias_;
  std::vector<EnvelopeEval> envelopes_;
  std::vector<EnvelopeEval> forward_envelopes_;
  Tensor<Scalar> product_;
  Tensor<Scalar> forward_weights_;
  Tensor<Scalar> input_;
  detail::ConvEngine<Scalar> engine_;
  std::size_t evaluations_ = 0;
};

/// Fully connected layer on flattened samples: y = x W + b with W[D,U].
template <typename Scalar>
class Dense : public Layer<Scalar> {
 public:
  Dense(std::string name, Tensor<Scalar> weights, bool use_bias = true) : Layer<Scalar>(std::move(name)) {
    if (weights.rank() != 2) throw DimensionError("dense weights must be [D,U]");
    const std::size_t units = weights.dim(1);
    weights_ = make_parameter(this->name() + ".W", ParamRole::weight, std::move(weights));
    if (use_bias) bias_ = make_parameter(this->name() + ".b", ParamRole::bias, Tensor<Scalar>({units}));
  }

  Shape output_shape(const Shape&) const override { return {units()}; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    const std::size_t batch = x.dim(0);
    if (x.size() != batch * inputs())
      throw DimensionError(this->name() + ": expected " + std::to_string(inputs()) + " features per sample, got " +
                           to_string(x.shape()));
    input_ = x;
    Tensor<Scalar> out({batch, units()});
    auto y = out.matrix(batch, units());
    y.noalias() = x.matrix(batch, inputs()) * weights_.value.matrix(inputs(), units());
    if (!bias_.value.empty()) y.rowwise() += bias_.value.flat().transpose();
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(input_);
    const std::size_t batch = input_.dim(0);
    const auto d = dy.matrix(batch, units());
    const auto x = input_.matrix(batch, inputs());
    weights_.grad.matrix(inputs(), units()).noalias() = x.transpose() * d;
    if (!bias_.value.empty()) bias_.grad.flat() = d.colwise().sum().transpose();
    Tensor<Scalar> dx(input_.shape());
    dx.matrix(batch, inputs()).noalias() = d * weights_.value.matrix(inputs(), units()).transpose();
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override {
    if (!bias_.value.empty()) return {&weights_, &bias_};
    return {&weights_};
  }

  std::size_t inputs() const { return weights_.value.dim(0); }
  std::size_t units() const { return weights_.value.dim(1); }

 private:
  Parameter<Scalar> weights_;
  Parameter<Scalar> bias_;
  Tensor<Scalar> input_;
};

/// Non-overlapping 2x2 max pooling on [N,H,W,C]; odd trailing rows/columns are dropped.
template <typename Scalar>
class MaxPool2x2 : public Layer<Scalar> {
 public:
  explicit MaxPool2x2(std::string name) : Layer<Scalar>(std::move(name)) {}

  Shape output_shape(const Shape& in) const override {
    if (in.at(0) < 2 || in.at(1) < 2) throw DimensionError(this->name() + ": input smaller than 2x2");
    return {in[0] / 2, in[1] / 2, in.at(2)};
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    if (x.rank() != 4) throw DimensionError(this->name() + ": expected [N,H,W,C]");
    const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
    const Shape os = output_shape({h, w, c});
    Tensor<Scalar> out({batch, os[0], os[1], c});
    argmax_.assign(out.size(), 0);
    input_shape_ = x.shape();
    std::size_t o = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < os[0]; ++i)
        for (std::size_t j = 0; j < os[1]; ++j)
          for (std::size_t ch = 0; ch < c; ++ch, ++o) {
            std::size_t best = ((b * h + 2 * i) * w + 2 * j) * c + ch;
            for (std::size_t di = 0; di < 2; ++di)
              for (std::size_t dj = 0; dj < 2; ++dj) {
                const std::size_t idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                if (x[idx] > x[best]) best = idx;
              }
            argmax_[o] = best;
            out[o] = x[best];
          }
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    if (input_shape_.empty()) throw StateError(this->name() + ": backward called before forward");
    if (dy.size() != argmax_.size()) throw DimensionError(this->name() + ": gradient shape mismatch");
    Tensor<Scalar> dx(input_shape_);
    for (std::size_t o = 0; o < argmax_.size(); ++o) dx[argmax_[o]] += dy[o];
    return dx;
  }

 private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

template <typename Scalar>
class ReLU : public Layer<Scalar> {
 public:
  explicit ReLU(std::string name) : Layer<Scalar>(std::move(name)) {}

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    Tensor<Scalar> out = x;
    for (auto& v : out.values()) v = v > Scalar(0) ? v : Scalar(0);
    output_ = out;
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(output_);
    Tensor<Scalar> dx = dy;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(output_[i] > Scalar(0))) dx[i] = Scalar(0);
    return dx;
  }

 private:
  Tensor<Scalar> output_;
};

/// Normalises the last axis (features/channels) over every other axis.
/// Running statistics follow r = momentum * r + (1 - momentum) * batch_stat.
template <typename Scalar>
class BatchNorm : public Layer<Scalar> {
 public:
  BatchNorm(std::string name, std::size_t features, double momentum = 0.9, double epsilon = 1e-5)
      : Layer<Scalar>(std::move(name)), momentum_(momentum), epsilon_(epsilon) {
    gamma_ = make_parameter(this->name() + ".gamma", ParamRole::scale, Tensor<Scalar>({features}, Scalar(1)));
    beta_ = make_parameter(this->name() + ".beta", ParamRole::shift, Tensor<Scalar>({features}));
    running_mean_ = make_parameter(this->name() + ".running_mean", ParamRole::running_mean,
                                   Tensor<Scalar>({features}));
    running_var_ = make_parameter(this->name() + ".running_var", ParamRole::running_var,
                                  Tensor<Scalar>({features}, Scalar(1)));
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    const std::size_t f = features();
    if (x.shape().back() != f) throw DimensionError(this->name() + ": feature count mismatch");
    const std::size_t rows = x.size() / f;
    const auto xm = x.matrix(rows, f);
    mode_ = mode;
    if (mode == Mode::train) {
      if (rows < 2) throw DimensionError(this->name() + ": training-mode batch norm needs at least two rows");
      const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> mean = xm.colwise().mean();
      const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> var = (xm.rowwise() - mean).array().square().colwise().mean();
      inv_std_ = (var.array() + static_cast<Scalar>(epsilon_)).rsqrt();
      xhat_ = Tensor<Scalar>(x.shape());
      xhat_.matrix(rows, f) = ((xm.rowwise() - mean).array().rowwise() * inv_std_.array()).matrix();
      const Scalar m = static_cast<Scalar>(momentum_);
      running_mean_.value.flat() = m * running_mean_.value.flat() + (Scalar(1) - m) * mean.transpose();
      running_var_.value.flat() = m * running_var_.value.flat() + (Scalar(1) - m) * var.transpose();
    } else {
      inv_std_ = (running_var_.value.flat().transpose().array() + static_cast<Scalar>(epsilon_)).rsqrt();
      xhat_ = Tensor<Scalar>(x.shape());
      xhat_.matrix(rows, f) =
          ((xm.rowwise() - running_mean_.value.flat().transpose()).array().rowwise() * inv_std_.array()).matrix();
    }
    Tensor<Scalar> out(x.shape());
    out.matrix(rows, f) = ((xhat_.matrix(rows, f).array().rowwise() * gamma_.value.flat().transpose().array())
                               .rowwise() +
                           beta_.value.flat().transpose().array())
                              .matrix();
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(xhat_);
    const std::size_t f = features();
    const std::size_t rows = dy.size() / f;
    const auto d = dy.matrix(rows, f);
    const auto xhat = xhat_.matrix(rows, f);
    beta_.grad.flat() = d.colwise().sum().transpose();
    gamma_.grad.flat() = (d.array() * xhat.array()).colwise().sum().transpose();
    const Eigen::Array<Scalar, 1, Eigen::Dynamic> gamma = gamma_.value.flat().transpose().array();
    Tensor<Scalar> dx(dy.shape());
    if (mode_ == Mode::train) {
      // dx = inv_std / M * (M * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
      const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> dxhat = d.array().rowwise() * gamma;
      const Eigen::Array<Scalar, 1, Eigen::Dynamic> sum_d = dxhat.colwise().sum();
      const Eigen::Array<Scalar, 1, Eigen::Dynamic> sum_dx = (dxhat * xhat.array()).colwise().sum();
      const Scalar m = static_cast<Scalar>(rows);
      dx.matrix(rows, f) =
          (((dxhat * m).rowwise() - sum_d - (xhat.array().rowwise() * sum_dx)).rowwise() * (inv_std_.array() / m))
              .matrix();
    } else {
      dx.matrix(rows, f) = (d.array().rowwise() * (gamma * inv_std_.array())).matrix();
    }
    return dx;
  }

  std::vector<Parameter<Scalar>*> parameters() override { return {&gamma_, &beta_}; }
  std::vector<Parameter<Scalar>*> buffers() override { return {&running_mean_, &running_var_}; }

  std::size_t features() const { return gamma_.value.size(); }

 private:
  double momentum_;
  double epsilon_;
  Mode mode_ = Mode::train;
  Parameter<Scalar> gamma_, beta_, running_mean_, running_var_;
  Tensor<Scalar> xhat_;
  Eigen::Matrix<Scalar, 1, Eigen::Dynamic> inv_std_;
};

/// Inverted dropout: train mode zeroes with probability `rate` and rescales the rest.
template <typename Scalar>
class Dropout : public Layer<Scalar> {
 public:
  Dropout(std::string name, double rate, std::uint64_t seed) : Layer<Scalar>(std::move(name)), rate_(rate), rng_(seed) {
    if (rate < 0 || rate >= 1) throw ArgumentError("dropout rate must lie in [0, 1)");
  }

  Shape output_shape(const Shape& in) const override { return in; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode mode) override {
    mask_ = Tensor<Scalar>(x.shape(), Scalar(1));
    if (mode == Mode::train && rate_ > 0) {
      std::bernoulli_distribution keep(1.0 - rate_);
      const Scalar scale = static_cast<Scalar>(1.0 / (1.0 - rate_));
      for (auto& m : mask_.values()) m = keep(rng_) ? scale : Scalar(0);
    }
    Tensor<Scalar> out = x;
    out.flat().array() *= mask_.flat().array();
    return out;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    this->require_forward(mask_);
    Tensor<Scalar> dx = dy;
    dx.flat().array() *= mask_.flat().array();
    return dx;
  }

  void reseed(std::uint64_t seed) { rng_.seed(seed); }
  const Tensor<Scalar>& mask() const { return mask_; }

 private:
  double rate_;
  std::mt19937_64 rng_;
  Tensor<Scalar> mask_;
};

/// [N, ...] -> [N, prod(...)].
template <typename Scalar>
class Flatten : public Layer<Scalar> {
 public:
  explicit Flatten(std::string name) : Layer<Scalar>(std::move(name)) {}

  Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, Mode) override {
    input_shape_ = x.shape();
    return x.reshaped({x.dim(0), x.size() / x.dim(0)});
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) override {
    if (input_shape_.empty()) throw StateError(this->name() + ": backward called before forward");
    return dy.reshaped(input_shape_);
  }

 private:
  Shape input_shape_;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

template <typename Scalar>
struct LossResult {
  double loss = 0;
  Tensor<Scalar> grad;
};

/// Mean categorical cross-entropy of softmax(logits[N,K]) against integer labels.
template <typename Scalar>
LossResult<Scalar> softmax_crossentropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw DimensionError("softmax_crossentropy expects logits[N,K] with N labels");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  LossResult<Scalar> out;
  out.grad = Tensor<Scalar>(logits.shape());
  double total = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw ArgumentError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    const Scalar* row = logits.data() + b * classes;
    const double peak = *std::max_element(row, row + classes);
    double z = 0;
    for (std::size_t k = 0; k < classes; ++k) z += std::exp(static_cast<double>(row[k]) - peak);
    const double log_z = std::log(z) + peak;
    total += log_z - static_cast<double>(row[label]);
    for (std::size_t k = 0; k < classes; ++k) {
      const double p = std::exp(static_cast<double>(row[k]) - log_z);
      out.grad(b, k) = static_cast<Scalar>((p - (static_cast<int>(k) == label ? 1.0 : 0.0)) / batch);
    }
  }
  out.loss = total / static_cast<double>(batch);
  return out;
}

/// Mean squared error over every element.
template <typename Scalar>
LossResult<Scalar> mse_loss(const Tensor<Scalar>& prediction, const Tensor<Scalar>& target) {
  if (prediction.shape() != target.shape()) throw DimensionError("mse_loss shape mismatch");
  LossResult<Scalar> out;
  out.grad = Tensor<Scalar>(prediction.shape());
  double total = 0;
  const double scale = 2.0 / static_cast<double>(prediction.size());
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double diff = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
    total += diff * diff;
    out.grad[i] = static_cast<Scalar>(scale * diff);
  }
  out.loss = total / static_cast<double>(prediction.size());
  return out;
}

}  // namespace aconv
