#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "aconv/network.hpp"
#include "aconv/training.hpp"

using namespace aconv;

namespace {

Tensord random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  Tensord t(shape);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

double dot(const Tensord& a, const Tensord& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Norm-wise relative error of two gradient tensors, floored so exact zeros compare absolutely.
double tensor_rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Loss E = sum(R o layer(x)). Checks dE/dx and every parameter gradient by central differences.
void check_layer(Layer<double>& layer, Tensord x, Mode mode, std::uint64_t seed,
                 const std::function<void()>& before_forward = [] {}, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  before_forward();
  const auto y = layer.forward(x, mode);
  const auto r = random_tensor(y.shape(), rng);
  const auto dx = layer.backward(r);
  std::vector<Tensord> grads;
  for (auto* p : layer.parameters()) grads.push_back(p->grad);

  auto loss = [&] {
    before_forward();
    return dot(r, layer.forward(x, mode));
  };
  const double eps = 1e-6;
  std::vector<double> fd_x(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss();
    x[i] = keep - eps;
    const double down = loss();
    x[i] = keep;
    fd_x[i] = (up - down) / (2 * eps);
  }
  EXPECT_LT(tensor_rel_err({dx.values().begin(), dx.values().end()}, fd_x), tol) << layer.name() << " dX";
  const auto params = layer.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::vector<double> fd(params[p]->value.size());
    for (std::size_t i = 0; i < params[p]->value.size(); ++i) {
      double& v = params[p]->value[i];
      const double keep = v, h = params[p]->role == ParamRole::aperture ? 1e-6 * keep : eps;
      v = keep + h;
      const double up = loss();
      v = keep - h;
      const double down = loss();
      v = keep;
      fd[i] = (up - down) / (2 * h);
    }
    EXPECT_LT(tensor_rel_err({grads[p].values().begin(), grads[p].values().end()}, fd), tol) << params[p]->name;
  }
}

AdaptiveKernelParams<double> random_params(std::size_t n, std::size_t c, std::vector<double> sigmas,
                                           std::mt19937_64& rng) {
  const std::size_t q = sigmas.size();
  return AdaptiveKernelParams<double>(random_tensor({n, n, c, q}, rng), std::move(sigmas));
}

}  // namespace

// ---------------------------------------------------------------------------
// aconv_forward / aconv_backward
// ---------------------------------------------------------------------------

double norm_rel_err(const Tensord& a, const Tensord& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

TEST(AconvForward, FlatEnvelopeApproachesConv) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({6, 6, 2}, rng);
  // 1 - u is of order d / (2 sigma^2): about 1e-5 at sigma 100, 1e-7 at sigma 1000
  for (const auto [sigma, tol] : {std::pair{100.0, 1e-4}, std::pair{1000.0, 1e-6}}) {
    const auto p = random_params(3, 2, {sigma, sigma, sigma}, rng);
    const auto a = aconv_forward(x, p).first;
    const auto c = conv_forward(x, p.weights).first;
    EXPECT_LT(norm_rel_err(a, c), tol) << sigma;
  }
}

TEST(AconvForward, ExactlyFlatEnvelopeIsBitIdenticalToConv) {
  std::mt19937_64 rng(2);
  const auto x = random_tensor({5, 5, 1}, rng);
  const auto w = random_tensor({3, 3, 1, 2}, rng);
  const auto grid = make_grid(3);
  const std::vector<EnvelopeEval> flat(2, EnvelopeEval{Eigen::ArrayXXd::Ones(3, 3), Eigen::ArrayXXd::Zero(3, 3), 1, 1});
  EXPECT_EQ(apply_envelopes(w, flat), w);
  // a 1x1 kernel has u == 1 exactly at every aperture
  const auto p1 = random_params(1, 1, {0.4, 2.0}, rng);
  EXPECT_EQ(aconv_forward(x, p1).first, conv_forward(x, p1.weights).first);
}

TEST(AconvForward, ZeroWeightsGiveZeroOutput) {
  std::mt19937_64 rng(3);
  const auto x = random_tensor({6, 6, 1}, rng);
  AdaptiveKernelParams<double> p(Tensord({3, 3, 1, 2}), {0.3, 0.5});
  const auto o = aconv_forward(x, p).first;
  for (double v : o.values()) EXPECT_EQ(v, 0.0);
}

TEST(AconvForward, EqualsCompositionOfOracles) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor({6, 6, 1}, rng);
    const auto p = random_params(3, 1, {0.3, 0.5}, rng);
    const auto [o, cache] = aconv_forward(x, p, trial % 2 ? Padding::same : Padding::valid);
    Tensord product(p.weights.shape());
    for (std::size_t q = 0; q < 2; ++q) {
      const auto u = envelope(p.grid, p.sigmas[q]).u;
      Tensord mask({3, 3, 1});
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) mask(i, j, 0) = u(i, j);
      Tensord slice({3, 3, 1});
      for (std::size_t i = 0; i < 9; ++i) slice[i] = p.weights[i * 2 + q];
      const auto masked = elementwise_multiply(slice, mask);
      for (std::size_t i = 0; i < 9; ++i) product[i * 2 + q] = masked[i];
    }
    const auto ref = cross_correlate(x, product, 1, trial % 2 ? Padding::same : Padding::valid);
    ASSERT_EQ(o.shape(), ref.shape());
    for (std::size_t i = 0; i < o.size(); ++i) EXPECT_NEAR(o[i], ref[i], 1e-12 * std::max(1.0, std::abs(ref[i])));
  }
}

TEST(AconvForward, ChannelMismatch) {
  std::mt19937_64 rng(5);
  const auto p = random_params(3, 2, {0.3}, rng);
  EXPECT_THROW(aconv_forward(Tensord({5, 5, 1}), p), DimensionError);
  EXPECT_THROW(AdaptiveKernelParams<double>(Tensord({3, 3, 1, 2}), {0.3}), DimensionError);
}

TEST(AconvForward, EnvelopeScalingConsistency) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor({7, 7, 2}, rng);
  const auto p = random_params(5, 2, {0.25, 0.6}, rng);
  auto envs = evaluate_envelopes<double>(p.grid, p.sigmas);
  Tensord half = p.weights;
  for (auto& v : half.values()) v *= 0.5;
  for (auto& e : envs) e.u *= 2.0;
  const auto rescaled = conv_forward(x, apply_envelopes(half, envs)).first;
  const auto o = aconv_forward(x, p).first;
  for (std::size_t i = 0; i < o.size(); ++i) EXPECT_LT(rel_err(o[i], rescaled[i]), 1e-12);
}

TEST(AconvBackward, ZeroUpstreamGivesZeroGradients) {
  std::mt19937_64 rng(7);
  const auto p = random_params(3, 1, {0.3, 0.5}, rng);
  const auto [o, cache] = aconv_forward(random_tensor({5, 5, 1}, rng), p);
  const auto g = aconv_backward(Tensord(o.shape()), cache);
  for (double v : g.dW.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.dX.values()) EXPECT_EQ(v, 0.0);
  for (double v : g.dSigmas) EXPECT_EQ(v, 0.0);
}

TEST(AconvBackward, ZeroWeightsGiveZeroApertureGradient) {
  std::mt19937_64 rng(8);
  AdaptiveKernelParams<double> p(Tensord({3, 3, 1, 2}), {0.3, 0.5});
  const auto [o, cache] = aconv_forward(random_tensor({5, 5, 1}, rng), p);
  const auto g = aconv_backward(random_tensor(o.shape(), rng), cache);
  for (double v : g.dSigmas) EXPECT_EQ(v, 0.0);
  double mass = 0;
  for (double v : g.dW.values()) mass += std::abs(v);
  EXPECT_GT(mass, 0.0);
}

TEST(AconvBackward, FiniteDifferencesOfSquaredOutput) {
  std::mt19937_64 rng(9);
  const auto x0 = random_tensor({5, 5, 1}, rng);
  auto p = random_params(3, 1, {0.3, 0.5}, rng);
  auto energy = [](const Tensord& o) { return dot(o, o); };
  const auto [o, cache] = aconv_forward(x0, p);
  Tensord dO = o;
  for (auto& v : dO.values()) v *= 2.0;  // dE/dO for E = sum(O^2)
  const auto g = aconv_backward(dO, cache);

  const double eps = 1e-6;
  auto x = x0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = energy(aconv_forward(x, p).first);
    x[i] = keep - eps;
    const double down = energy(aconv_forward(x, p).first);
    x[i] = keep;
    EXPECT_LT(rel_err(g.dX[i], (up - down) / (2 * eps)), 1e-5);
  }
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    const double keep = p.weights[i];
    p.weights[i] = keep + eps;
    const double up = energy(aconv_forward(x0, p).first);
    p.weights[i] = keep - eps;
    const double down = energy(aconv_forward(x0, p).first);
    p.weights[i] = keep;
    EXPECT_LT(rel_err(g.dW[i], (up - down) / (2 * eps)), 1e-5);
  }
  for (std::size_t q = 0; q < 2; ++q) {
    const double keep = p.sigmas[q], h = 1e-6 * keep;
    p.sigmas[q] = keep + h;
    const double up = energy(aconv_forward(x0, p).first);
    p.sigmas[q] = keep - h;
    const double down = energy(aconv_forward(x0, p).first);
    p.sigmas[q] = keep;
    EXPECT_LT(rel_err(g.dSigmas[q], (up - down) / (2 * h)), 1e-5);
  }
}

TEST(AconvBackward, ScaleHeldConstantGradientIsNotTheTrueDerivative) {
  std::mt19937_64 rng(10);
  const auto x = random_tensor({6, 6, 1}, rng);
  auto p = random_params(5, 1, {0.4}, rng);
  const auto [o, cache] = aconv_forward(x, p, Padding::valid, 1, ScaleDerivative::scale_held_constant);
  const auto r = random_tensor(o.shape(), rng);
  const double literal = aconv_backward(r, cache).dSigmas[0];
  const double h = 1e-6;
  p.sigmas[0] = 0.4 + h;
  const double up = dot(r, aconv_forward(x, p).first);
  p.sigmas[0] = 0.4 - h;
  const double down = dot(r, aconv_forward(x, p).first);
  EXPECT_GT(rel_err(literal, (up - down) / (2 * h)), 1e-3);
}

TEST(AconvBackward, GradientSumRule) {
  std::mt19937_64 rng(11);
  const auto x = random_tensor({8, 7, 2}, rng);
  const auto p = random_params(3, 2, {0.2, 0.7, 1.5}, rng);
  const auto [o, cache] = aconv_forward(x, p);
  const auto d = random_tensor(o.shape(), rng);
  const auto g = aconv_backward(d, cache);
  double lhs = 0, rhs = 0;
  for (double v : g.dX.values()) lhs += v;
  const std::size_t Q = 3, taps = cache.product.size() / Q;
  for (std::size_t q = 0; q < Q; ++q) {
    double kernel_sum = 0, d_sum = 0;
    for (std::size_t t = 0; t < taps; ++t) kernel_sum += cache.product[t * Q + q];
    for (std::size_t i = q; i < d.size(); i += Q) d_sum += d[i];
    rhs += kernel_sum * d_sum;
  }
  EXPECT_LT(rel_err(lhs, rhs), 1e-10);
}

TEST(AconvBackward, StaleOrMismatchedCache) {
  std::mt19937_64 rng(12);
  EXPECT_THROW(aconv_backward(Tensord({3, 3, 1}), AdaptiveConvCache<double>{}), StateError);
  const auto p = random_params(3, 1, {0.3}, rng);
  const auto [o, cache] = aconv_forward(random_tensor({5, 5, 1}, rng), p);
  EXPECT_THROW(aconv_backward(Tensord({4, 4, 1}), cache), StateError);
}

TEST(AconvBackward, Deterministic) {
  std::mt19937_64 rng(13);
  const auto x = random_tensor({2, 6, 6, 2}, rng);
  const auto p = random_params(3, 2, {0.3, 0.9}, rng);
  const auto d = random_tensor({2, 4, 4, 2}, rng);
  const auto [o1, c1] = aconv_forward(x, p);
  const auto [o2, c2] = aconv_forward(x, p);
  EXPECT_EQ(o1, o2);
  const auto g1 = aconv_backward(d, c1), g2 = aconv_backward(d, c2);
  EXPECT_EQ(g1.dW, g2.dW);
  EXPECT_EQ(g1.dX, g2.dX);
  EXPECT_EQ(g1.dSigmas, g2.dSigmas);
}

TEST(ConvForward, IdentityKernel) {
  std::mt19937_64 rng(14);
  const auto x = random_tensor({4, 5, 1}, rng);
  EXPECT_EQ(conv_forward(x, Tensord({1, 1, 1, 1}, 1.0)).first, x);
}

TEST(ConvBackward, FiniteDifferences) {
  std::mt19937_64 rng(15);
  auto x = random_tensor({6, 5, 2}, rng);
  auto w = random_tensor({3, 3, 2, 2}, rng);
  const auto [o, cache] = conv_forward(x, w, Padding::same);
  const auto r = random_tensor(o.shape(), rng);
  const auto g = conv_backward(r, cache);
  const double eps = 1e-6;
  auto loss = [&] { return dot(r, conv_forward(x, w, Padding::same).first); };
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double keep = w[i];
    w[i] = keep + eps;
    const double up = loss();
    w[i] = keep - eps;
    const double down = loss();
    w[i] = keep;
    EXPECT_LT(rel_err(g.dW[i], (up - down) / (2 * eps)), 1e-6);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = loss();
    x[i] = keep - eps;
    const double down = loss();
    x[i] = keep;
    EXPECT_LT(rel_err(g.dX[i], (up - down) / (2 * eps)), 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Layer objects
// ---------------------------------------------------------------------------

TEST(Layers, Conv2DGradients) {
  std::mt19937_64 rng(20);
  Conv2D<double> layer("conv", random_tensor({3, 3, 2, 3}, rng), Padding::same);
  check_layer(layer, random_tensor({2, 5, 4, 2}, rng), Mode::train, 1);
}

TEST(Layers, AdaptiveConv2DGradients) {
  std::mt19937_64 rng(21);
  AdaptiveConv2D<double> layer("aconv", random_tensor({5, 5, 2, 3}, rng), {0.2, 0.45, 2.0}, Padding::valid);
  check_layer(layer, random_tensor({2, 7, 6, 2}, rng), Mode::train, 2);
}

TEST(Layers, AdaptiveConv2DEnvelopeCache) {
  std::mt19937_64 rng(22);
  AdaptiveConv2D<double> layer("aconv", random_tensor({3, 3, 1, 2}, rng), {0.3, 0.5});
  const auto x = random_tensor({1, 5, 5, 1}, rng);
  layer.forward(x, Mode::train);
  EXPECT_EQ(layer.envelope_evaluations(), 2u);
  layer.forward(x, Mode::train);
  EXPECT_EQ(layer.envelope_evaluations(), 2u);
  layer.sigmas()[1] = 0.6;
  layer.forward(x, Mode::train);
  EXPECT_EQ(layer.envelope_evaluations(), 3u);
}

TEST(Layers, AdaptiveConv2DProductKernelQueryDoesNotDisturbBackward) {
  std::mt19937_64 rng(23);
  AdaptiveConv2D<double> a("a", random_tensor({3, 3, 1, 1}, rng), {0.3}, Padding::valid, false);
  AdaptiveConv2D<double> b = a;
  const auto x = random_tensor({1, 5, 5, 1}, rng);
  const auto r = random_tensor({1, 3, 3, 1}, rng);
  a.forward(x, Mode::train);
  b.forward(x, Mode::train);
  b.sigmas()[0] = 0.9;
  b.product_kernel();
  b.sigmas()[0] = 0.3;
  a.backward(r);
  b.backward(r);
  EXPECT_EQ(a.parameters()[0]->grad, b.parameters()[0]->grad);
  EXPECT_EQ(a.parameters()[1]->grad, b.parameters()[1]->grad);
}

TEST(Layers, DenseGradients) {
  std::mt19937_64 rng(24);
  Dense<double> layer("dense", random_tensor({6, 4}, rng));
  check_layer(layer, random_tensor({3, 6}, rng), Mode::train, 3);
}

TEST(Layers, MaxPoolGradients) {
  std::mt19937_64 rng(25);
  MaxPool2x2<double> layer("pool");
  const auto x = random_tensor({2, 5, 4, 3}, rng);
  EXPECT_EQ(layer.forward(x, Mode::train).shape(), (Shape{2, 2, 2, 3}));
  check_layer(layer, x, Mode::train, 4);
}

TEST(Layers, ReluExampleAndGradients) {
  ReLU<double> layer("relu");
  const auto y = layer.forward(Tensord({1, 3}, std::vector<double>{-1, 0, 2}), Mode::train);
  EXPECT_EQ(y, Tensord({1, 3}, std::vector<double>{0, 0, 2}));
  std::mt19937_64 rng(26);
  check_layer(layer, random_tensor({4, 5}, rng), Mode::train, 5);
}

TEST(Layers, BatchNormTrainGradients) {
  std::mt19937_64 rng(27);
  BatchNorm<double> layer("bn", 3);
  layer.parameters()[0]->value = random_tensor({3}, rng);
  layer.parameters()[1]->value = random_tensor({3}, rng);
  check_layer(layer, random_tensor({4, 2, 2, 3}, rng, 2.0), Mode::train, 6);
}

TEST(Layers, BatchNormEvalGradients) {
  std::mt19937_64 rng(28);
  BatchNorm<double> layer("bn", 4, 0.5);
  for (int i = 0; i < 3; ++i) layer.forward(random_tensor({6, 4}, rng), Mode::train);
  check_layer(layer, random_tensor({5, 4}, rng), Mode::eval, 7);
}

TEST(Layers, BatchNormNormalisesBatch) {
  std::mt19937_64 rng(29);
  BatchNorm<double> layer("bn", 2);
  const auto y = layer.forward(random_tensor({64, 2}, rng, 3.0), Mode::train);
  for (std::size_t f = 0; f < 2; ++f) {
    double m = 0, v = 0;
    for (std::size_t b = 0; b < 64; ++b) m += y(b, f) / 64;
    for (std::size_t b = 0; b < 64; ++b) v += (y(b, f) - m) * (y(b, f) - m) / 64;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
  EXPECT_EQ(layer.buffers().size(), 2u);
}

TEST(Layers, DropoutFixedMaskGradients) {
  std::mt19937_64 rng(30);
  Dropout<double> layer("drop", 0.4, 9);
  check_layer(layer, random_tensor({3, 7}, rng), Mode::train, 8, [&] { layer.reseed(9); });
}

TEST(Layers, DropoutIsIdentityInEval) {
  std::mt19937_64 rng(31);
  Dropout<double> layer("drop", 0.5, 1);
  const auto x = random_tensor({4, 4}, rng);
  EXPECT_EQ(layer.forward(x, Mode::eval), x);
  EXPECT_THROW(Dropout<double>("bad", 1.0, 1), ArgumentError);
}

TEST(Layers, FlattenRoundTrip) {
  std::mt19937_64 rng(32);
  Flatten<double> layer("flat");
  const auto x = random_tensor({2, 3, 3, 2}, rng);
  const auto y = layer.forward(x, Mode::train);
  EXPECT_EQ(y.shape(), (Shape{2, 18}));
  EXPECT_EQ(layer.backward(y), x);
}

TEST(Layers, BackwardBeforeForwardIsStateError) {
  std::mt19937_64 rng(33);
  Conv2D<double> conv("conv", random_tensor({3, 3, 1, 1}, rng));
  AdaptiveConv2D<double> aconv("aconv", random_tensor({3, 3, 1, 1}, rng), {0.3});
  Dense<double> dense("dense", random_tensor({3, 2}, rng));
  EXPECT_THROW(conv.backward(Tensord({1, 1, 1, 1})), StateError);
  EXPECT_THROW(aconv.backward(Tensord({1, 1, 1, 1})), StateError);
  EXPECT_THROW(dense.backward(Tensord({1, 2})), StateError);
}

TEST(Loss, SoftmaxCrossEntropyLargeMarginIsZero) {
  const std::vector<int> labels{1, 0};
  const auto r = softmax_crossentropy(Tensord({2, 3}, std::vector<double>{0, 100, 0, 100, 0, 0}), labels);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
}

TEST(Loss, SoftmaxCrossEntropyGradient) {
  std::mt19937_64 rng(34);
  auto logits = random_tensor({4, 5}, rng);
  const std::vector<int> labels{0, 3, 4, 1};
  const auto r = softmax_crossentropy(logits, labels);
  EXPECT_NEAR(r.loss, [&] {
    double total = 0;
    for (std::size_t b = 0; b < 4; ++b) {
      double z = 0;
      for (std::size_t k = 0; k < 5; ++k) z += std::exp(logits(b, k));
      total += std::log(z) - logits(b, static_cast<std::size_t>(labels[b]));
    }
    return total / 4;
  }(), 1e-12);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double keep = logits[i];
    logits[i] = keep + 1e-6;
    const double up = softmax_crossentropy(logits, labels).loss;
    logits[i] = keep - 1e-6;
    const double down = softmax_crossentropy(logits, labels).loss;
    logits[i] = keep;
    EXPECT_LT(rel_err(r.grad[i], (up - down) / 2e-6), 1e-6);
  }
  EXPECT_THROW(softmax_crossentropy(logits, std::vector<int>{0, 1}), DimensionError);
}

TEST(Loss, MeanSquaredError) {
  const auto r = mse_loss(Tensord({2}, std::vector<double>{1, 3}), Tensord({2}, std::vector<double>{0, 1}));
  EXPECT_DOUBLE_EQ(r.loss, 2.5);
  EXPECT_DOUBLE_EQ(r.grad[0], 1.0);
  EXPECT_DOUBLE_EQ(r.grad[1], 2.0);
  EXPECT_THROW(mse_loss(Tensord({2}), Tensord({3})), DimensionError);
}

// ---------------------------------------------------------------------------
// Whole network
// ---------------------------------------------------------------------------

TEST(Network, EndToEndGradients) {
  NetworkSpec spec;
  spec.kind = ConvKind::aconv;
  spec.kernel_size = 3;
  spec.conv_layers = 2;
  spec.filters = 2;
  spec.dense_units = 4;
  spec.dropout = 0;
  spec.height = spec.width = 7;
  spec.classes = 3;
  auto net = build_network<double>(spec, 5);
  std::mt19937_64 rng(40);
  auto x = random_tensor({3, 7, 7, 1}, rng);
  const std::vector<int> labels{0, 2, 1};
  auto loss = [&] { return softmax_crossentropy(net.forward(x, Mode::train), labels).loss; };
  const auto r = softmax_crossentropy(net.forward(x, Mode::train), labels);
  net.backward(r.grad);
  for (auto* p : net.parameters()) {
    const std::vector<double> analytic(p->grad.values().begin(), p->grad.values().end());
    std::vector<double> fd(analytic.size());
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      double& v = p->value[i];
      const double keep = v, h = p->role == ParamRole::aperture ? 1e-6 * keep : 1e-6;
      v = keep + h;
      const double up = loss();
      v = keep - h;
      const double down = loss();
      v = keep;
      fd[i] = (up - down) / (2 * h);
    }
    // biases ahead of batch norm have zero true gradient; the floor compares them absolutely
    EXPECT_LT(tensor_rel_err(analytic, fd, 1e-4), 1e-5) << p->name;
  }
}

TEST(Network, ParameterCountParity) {
  for (std::size_t n : {3u, 5u, 7u, 9u}) {
    NetworkSpec spec;
    spec.kernel_size = n;
    spec.kind = ConvKind::conv;
    auto conv = build_network<float>(spec, 1);
    spec.kind = ConvKind::aconv;
    auto aconv = build_network<float>(spec, 1);
    EXPECT_EQ(aconv.parameter_count() - conv.parameter_count(), spec.filters * spec.conv_layers) << n;
    EXPECT_EQ(aconv.adaptive_layers().size(), spec.conv_layers);
  }
}

TEST(Network, InitialAperturesAreClipped) {
  NetworkSpec spec;
  spec.kind = ConvKind::aconv;
  spec.kernel_size = 7;
  auto net = build_network<double>(spec, 1);
  for (auto* a : net.adaptive_layers())
    for (double s : a->sigmas()) {
      EXPECT_GE(s, 1.0 / 7);
      EXPECT_LE(s, 0.5);
    }
}
