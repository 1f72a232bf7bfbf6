#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "aconv/data.hpp"
#include "aconv/network.hpp"

namespace aconv {

// ---------------------------------------------------------------------------
// Configuration and report
// ---------------------------------------------------------------------------

struct TrainConfig {
  std::size_t repeats = 1;
  std::size_t epochs = 15;
  std::size_t batch_size = 128;
  /// Dataset multiplier eta; the initial learning rate is 0.1 * eta.
  double lr_multiplier = 0.1;
  double momentum = 0.9;
  double clip_value = 1.0;
  double sigma_lo = 0.1;
  double sigma_hi = 0.5;
  double plateau_factor = 0.9;
  std::size_t plateau_patience = 10;
  std::uint64_t seed = 1;

  double learning_rate() const { return 0.1 * lr_multiplier; }
  void validate() const;
};

struct EpochRecord {
  std::size_t repeat = 0;
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  double lr = 0;
  /// Apertures at the end of the epoch, [adaptive layer][filter].
  std::vector<std::vector<double>> sigmas;
};

struct RepeatFailure {
  std::size_t repeat = 0;
  std::size_t epoch = 0;
  std::size_t batch = 0;
  std::string message;
};

struct ExperimentReport {
  std::string label;
  std::vector<std::string> adaptive_layer_names;
  std::vector<EpochRecord> epochs;
  std::vector<double> best_test_results;
  std::vector<RepeatFailure> failures;
  /// Wall-clock seconds of each forward+backward+update step.
  std::vector<double> step_seconds;
  /// Extremes of every aperture observed after every optimiser step.
  double min_sigma_seen = std::numeric_limits<double>::infinity();
  double max_sigma_seen = -std::numeric_limits<double>::infinity();
  std::size_t aperture_violations = 0;
  std::size_t parameter_count = 0;

  double mean_best() const;
  double std_best() const;
  double max_best() const;
};

// ---------------------------------------------------------------------------
// Optimiser pieces
// ---------------------------------------------------------------------------

/// Clip g to [-clip, clip] elementwise, then v = m v - lr g, p = p + v.
template <typename Scalar>
void sgd_momentum_step(std::span<Scalar> param, std::span<const Scalar> grad, std::span<Scalar> velocity,
                       double lr, double momentum, double clip_value, const std::string& name = "parameter") {
  if (param.size() != grad.size() || param.size() != velocity.size())
    throw DimensionError(name + ": parameter, gradient and velocity sizes differ");
  if (!(lr > 0)) throw ArgumentError("learning rate must be positive");
  for (std::size_t i = 0; i < param.size(); ++i)
    if (!std::isfinite(grad[i])) throw TrainingError("non-finite gradient in " + name);
  const Scalar m = static_cast<Scalar>(momentum), rate = static_cast<Scalar>(lr), c = static_cast<Scalar>(clip_value);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const Scalar g = std::clamp(grad[i], -c, c);
    velocity[i] = m * velocity[i] - rate * g;
    param[i] += velocity[i];
  }
}

/// Keeps per-parameter velocities for a fixed parameter list.
template <typename Scalar>
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double clip_value) : momentum_(momentum), clip_value_(clip_value) {}

  void step(const std::vector<Parameter<Scalar>*>& params, double lr) {
    if (velocity_.empty())
      for (auto* p : params) velocity_.emplace_back(p->value.size(), Scalar(0));
    if (velocity_.size() != params.size()) throw StateError("optimiser parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i)
      sgd_momentum_step<Scalar>(params[i]->value.values(), params[i]->grad.values(), velocity_[i], lr, momentum_,
                                clip_value_, params[i]->name);
  }

 private:
  double momentum_;
  double clip_value_;
  std::vector<std::vector<Scalar>> velocity_;
};

/// Clamps apertures into [1/n, n].
template <typename Scalar>
void clip_sigma(std::span<Scalar> sigmas, std::size_t n) {
  if (n == 0) throw ArgumentError("kernel size must be positive");
  const Scalar lo = static_cast<Scalar>(1.0 / static_cast<double>(n)), hi = static_cast<Scalar>(n);
  for (auto& s : sigmas) s = std::clamp(s, lo, hi);
}

inline std::vector<double> clip_sigma(std::vector<double> sigmas, std::size_t n) {
  clip_sigma<double>(std::span<double>(sigmas), n);
  return sigmas;
}

/// Q linearly spaced apertures from lo to hi inclusive; a single filter gets the midpoint.
std::vector<double> init_sigmas(std::size_t filters, double lo = 0.1, double hi = 0.5);

enum class InitScheme { glorot_uniform, he_normal };

InitScheme parse_init_scheme(const std::string& text);

/// Keras-style fans: conv [n,n,C,Q] -> (n*n*C, n*n*Q); dense [D,U] -> (D, U).
std::pair<std::size_t, std::size_t> fans_of(const Shape& shape);

double glorot_limit(std::size_t fan_in, std::size_t fan_out);

template <typename Scalar>
Tensor<Scalar> init_weights(const Shape& shape, std::size_t fan_in, std::size_t fan_out, InitScheme scheme,
                            std::uint64_t seed) {
  if (fan_in == 0) throw ArgumentError("fan_in must be at least 1");
  std::mt19937_64 rng(seed);
  Tensor<Scalar> w(shape);
  if (scheme == InitScheme::glorot_uniform) {
    std::uniform_real_distribution<double> dist(-glorot_limit(fan_in, fan_out), glorot_limit(fan_in, fan_out));
    for (auto& v : w.values()) v = static_cast<Scalar>(dist(rng));
  } else {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    for (auto& v : w.values()) v = static_cast<Scalar>(dist(rng));
  }
  return w;
}

template <typename Scalar>
Tensor<Scalar> init_weights(const Shape& shape, InitScheme scheme, std::uint64_t seed) {
  const auto [fan_in, fan_out] = fans_of(shape);
  return init_weights<Scalar>(shape, fan_in, fan_out, scheme, seed);
}

/// Multiplies the rate by `factor` once `patience` consecutive epochs pass
/// without a strictly lower validation loss; improvement resets the count.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor = 0.9, std::size_t patience = 10)
      : lr_(lr), factor_(factor), patience_(patience) {}

  double update(double val_loss);
  double lr() const { return lr_; }

 private:
  double lr_;
  double factor_;
  std::size_t patience_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t wait_ = 0;
};

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

enum class ConvKind { conv, aconv };

std::string to_string(ConvKind kind);
ConvKind parse_conv_kind(const std::string& text);

/// Two correlation layers (+BN+ReLU), 2x2 max-pool, dropout, dense hidden
/// (+BN+ReLU), dropout, dense softmax head. Depth and widths are adjustable
/// so tests can build tiny variants.
struct NetworkSpec {
  ConvKind kind = ConvKind::conv;
  std::size_t kernel_size = 7;
  std::size_t conv_layers = 2;
  std::size_t filters = 32;
  std::size_t dense_units = 256;
  double dropout = 0.5;
  bool batch_norm = true;
  double bn_momentum = 0.9;
  bool pool = true;
  Padding padding = Padding::valid;
  std::size_t height = 28, width = 28, channels = 1;
  std::size_t classes = 10;
  InitScheme init = InitScheme::glorot_uniform;
  double sigma_lo = 0.1;
  double sigma_hi = 0.5;
};

template <typename Scalar>
Sequential<Scalar> build_network(const NetworkSpec& spec, std::uint64_t seed) {
  if (spec.conv_layers == 0) throw ArgumentError("network needs at least one correlation layer");
  std::mt19937_64 seeds(seed);
  Sequential<Scalar> net;
  Shape shape{spec.height, spec.width, spec.channels};
  for (std::size_t i = 0; i < spec.conv_layers; ++i) {
    const std::string name = (spec.kind == ConvKind::aconv ? "aconv" : "conv") + std::to_string(i + 1);
    const Shape wshape{spec.kernel_size, spec.kernel_size, shape[2], spec.filters};
    auto weights = init_weights<Scalar>(wshape, spec.init, seeds());
    if (spec.kind == ConvKind::aconv) {
      auto init = init_sigmas(spec.filters, spec.sigma_lo, spec.sigma_hi);
      init = clip_sigma(std::move(init), spec.kernel_size);
      std::vector<Scalar> sig(init.begin(), init.end());
      shape = net.template add<AdaptiveConv2D<Scalar>>(name, std::move(weights), std::move(sig), spec.padding)
                  .output_shape(shape);
    } else {
      shape = net.template add<Conv2D<Scalar>>(name, std::move(weights), spec.padding).output_shape(shape);
    }
    if (spec.batch_norm) net.template add<BatchNorm<Scalar>>(name + ".bn", spec.filters, spec.bn_momentum);
    net.template add<ReLU<Scalar>>(name + ".relu");
  }
  if (spec.pool) shape = net.template add<MaxPool2x2<Scalar>>("pool").output_shape(shape);
  if (spec.dropout > 0) net.template add<Dropout<Scalar>>("drop1", spec.dropout, seeds());
  shape = net.template add<Flatten<Scalar>>("flatten").output_shape(shape);
  std::size_t features = shape[0];
  if (spec.dense_units > 0) {
    net.template add<Dense<Scalar>>("dense1", init_weights<Scalar>({features, spec.dense_units}, spec.init, seeds()));
    if (spec.batch_norm) net.template add<BatchNorm<Scalar>>("dense1.bn", spec.dense_units, spec.bn_momentum);
    net.template add<ReLU<Scalar>>("dense1.relu");
    if (spec.dropout > 0) net.template add<Dropout<Scalar>>("drop2", spec.dropout, seeds());
    features = spec.dense_units;
  }
  net.template add<Dense<Scalar>>("logits", init_weights<Scalar>({features, spec.classes}, spec.init, seeds()));
  return net;
}

/// Gathers the given rows of a [N,H,W,C] tensor into a batch of Scalar.
template <typename Scalar>
Tensor<Scalar> gather_batch(const Tensord& x, std::span<const std::size_t> rows) {
  Shape shape = x.shape();
  const std::size_t per = x.size() / shape[0];
  shape[0] = rows.size();
  Tensor<Scalar> out(shape);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const double* src = x.data() + rows[r] * per;
    std::transform(src, src + per, out.data() + r * per, [](double v) { return static_cast<Scalar>(v); });
  }
  return out;
}

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
};

template <typename Scalar>
Evaluation evaluate(Sequential<Scalar>& net, const Tensord& x, const std::vector<int>& y, std::size_t chunk = 250) {
  Evaluation out;
  std::size_t correct = 0;
  double loss_sum = 0;
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < y.size(); start += chunk) {
    const std::size_t stop = std::min(y.size(), start + chunk);
    rows.resize(stop - start);
    std::iota(rows.begin(), rows.end(), start);
    const auto logits = net.forward(gather_batch<Scalar>(x, rows), Mode::eval);
    const std::span<const int> labels(y.data() + start, stop - start);
    loss_sum += softmax_crossentropy(logits, labels).loss * static_cast<double>(stop - start);
    const std::size_t classes = logits.dim(1);
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const Scalar* row = logits.data() + b * classes;
      const auto pred = static_cast<int>(std::max_element(row, row + classes) - row);
      if (pred == labels[b]) ++correct;
    }
  }
  out.loss = loss_sum / static_cast<double>(y.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(y.size());
  return out;
}

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat);

/// Repeat / epoch / batch protocol: per batch forward, cross-entropy, backward,
/// SGD-momentum update and aperture clipping; per epoch validation accuracy on
/// the test split and a plateau step; per repeat the peak accuracy.
template <typename Scalar>
ExperimentReport run_experiment(const NetworkSpec& spec, const DatasetBundle& data, const TrainConfig& config,
                                const std::string& label = "") {
  config.validate();
  if (data.train_y.size() < config.batch_size)
    throw ArgumentError("dataset of " + std::to_string(data.train_y.size()) + " training images is smaller than batch size " +
                        std::to_string(config.batch_size));
  NetworkSpec net_spec = spec;
  net_spec.height = data.height();
  net_spec.width = data.width();
  net_spec.channels = data.channels();
  net_spec.classes = static_cast<std::size_t>(data.class_count);
  net_spec.sigma_lo = config.sigma_lo;
  net_spec.sigma_hi = config.sigma_hi;

  ExperimentReport report;
  report.label = label;
  const std::size_t train_count = data.train_y.size();

  for (std::size_t r = 0; r < config.repeats; ++r) {
    const std::uint64_t seed = repeat_seed(config.seed, r);
    auto net = build_network<Scalar>(net_spec, seed);
    auto adaptive = net.adaptive_layers();
    if (r == 0) {
      report.parameter_count = net.parameter_count();
      for (auto* a : adaptive) report.adaptive_layer_names.push_back(a->name());
    }
    const auto params = net.parameters();
    SgdMomentum<Scalar> optimiser(config.momentum, config.clip_value);
    PlateauScheduler schedule(config.learning_rate(), config.plateau_factor, config.plateau_patience);
    std::mt19937_64 shuffle_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_count);
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> accuracies;
    bool aborted = false;

    for (std::size_t e = 0; e < config.epochs && !aborted; ++e) {
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      const double lr = schedule.lr();
      double loss_sum = 0;
      std::size_t seen = 0, batch_index = 0;
      for (std::size_t start = 0; start < train_count; start += config.batch_size, ++batch_index) {
        const std::size_t stop = std::min(train_count, start + config.batch_size);
        const std::span<const std::size_t> rows(order.data() + start, stop - start);
        std::vector<int> labels(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data.train_y[rows[i]];

        const auto t0 = std::chrono::steady_clock::now();
        const auto logits = net.forward(gather_batch<Scalar>(data.train_x, rows), Mode::train);
        const auto loss = softmax_crossentropy<Scalar>(logits, labels);
        if (!std::isfinite(loss.loss)) {
          report.failures.push_back({r, e, batch_index, "non-finite training loss"});
          aborted = true;
          break;
        }
        net.backward(loss.grad);
        try {
          optimiser.step(params, lr);
        } catch (const TrainingError& err) {
          report.failures.push_back({r, e, batch_index, err.what()});
          aborted = true;
          break;
        }
        for (auto* a : adaptive) {
          clip_sigma<Scalar>(a->sigmas(), a->kernel_size());
          const double lo = 1.0 / static_cast<double>(a->kernel_size()), hi = static_cast<double>(a->kernel_size());
          for (Scalar s : a->sigmas()) {
            const double v = static_cast<double>(s);
            report.min_sigma_seen = std::min(report.min_sigma_seen, v);
            report.max_sigma_seen = std::max(report.max_sigma_seen, v);
            // float storage may round 1/n by one ulp
            if (v < lo * (1 - 1e-6) || v > hi * (1 + 1e-6)) ++report.aperture_violations;
          }
        }
        report.step_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        loss_sum += loss.loss * static_cast<double>(rows.size());
        seen += rows.size();
      }
      if (aborted) break;

      const auto val = evaluate(net, data.test_x, data.test_y);
      accuracies.push_back(val.accuracy);
      EpochRecord rec;
      rec.repeat = r;
      rec.epoch = e;
      rec.train_loss = loss_sum / static_cast<double>(seen);
      rec.val_loss = val.loss;
      rec.val_acc = val.accuracy;
      rec.lr = lr;
      for (auto* a : adaptive) {
        const auto s = a->sigmas();
        rec.sigmas.emplace_back(s.begin(), s.end());
      }
      report.epochs.push_back(std::move(rec));
      schedule.update(val.loss);
    }

    if (accuracies.empty()) {
      if (!aborted) throw TrainingError("no epoch accuracies recorded; cannot take the peak of an empty list");
      report.best_test_results.push_back(std::numeric_limits<double>::quiet_NaN());
    } else {
      report.best_test_results.push_back(*std::max_element(accuracies.begin(), accuracies.end()));
    }
  }
  return report;
}

}  // namespace aconv
