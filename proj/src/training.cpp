#include "aconv/training.hpp"

#include <cmath>

namespace aconv {

void TrainConfig::validate() const {
  if (repeats == 0) throw ArgumentError("repeats must be positive");
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  if (!(lr_multiplier > 0)) throw ArgumentError("learning-rate multiplier must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ArgumentError("momentum must lie in [0, 1)");
  if (!(clip_value > 0)) throw ArgumentError("gradient clip value must be positive");
  if (!(sigma_lo > 0 && sigma_hi >= sigma_lo)) throw ArgumentError("aperture init range must satisfy 0 < lo <= hi");
  if (!(plateau_factor > 0 && plateau_factor <= 1)) throw ArgumentError("plateau factor must lie in (0, 1]");
  if (plateau_patience == 0) throw ArgumentError("plateau patience must be positive");
}

double ExperimentReport::mean_best() const {
  double total = 0;
  for (double v : best_test_results) total += v;
  return best_test_results.empty() ? 0.0 : total / static_cast<double>(best_test_results.size());
}

double ExperimentReport::std_best() const {
  if (best_test_results.size() < 2) return 0.0;
  const double mean = mean_best();
  double ss = 0;
  for (double v : best_test_results) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(best_test_results.size() - 1));
}

double ExperimentReport::max_best() const {
  double best = -std::numeric_limits<double>::infinity();
  for (double v : best_test_results) best = std::max(best, v);
  return best;
}

std::vector<double> init_sigmas(std::size_t filters, double lo, double hi) {
  if (filters == 0) throw ArgumentError("need at least one filter");
  if (!(lo < hi)) throw ArgumentError("aperture range requires lo < hi");
  if (filters == 1) return {0.5 * (lo + hi)};
  std::vector<double> out(filters);
  for (std::size_t q = 0; q < filters; ++q)
    out[q] = lo + (hi - lo) * static_cast<double>(q) / static_cast<double>(filters - 1);
  return out;
}

InitScheme parse_init_scheme(const std::string& text) {
  if (text == "glorot-uniform") return InitScheme::glorot_uniform;
  if (text == "he-normal") return InitScheme::he_normal;
  throw ArgumentError("unknown init scheme '" + text + "'");
}

std::pair<std::size_t, std::size_t> fans_of(const Shape& shape) {
  if (shape.size() == 4) {
    const std::size_t area = shape[0] * shape[1];
    return {area * shape[2], area * shape[3]};
  }
  if (shape.size() == 2) return {shape[0], shape[1]};
  if (shape.size() == 1) return {shape[0], shape[0]};
  throw DimensionError("cannot infer fans of shape " + to_string(shape));
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

double PlateauScheduler::update(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    wait_ = 0;
  } else if (++wait_ >= patience_) {
    lr_ *= factor_;
    wait_ = 0;
  }
  return lr_;
}

std::string to_string(ConvKind kind) { return kind == ConvKind::aconv ? "aconv" : "conv"; }

ConvKind parse_conv_kind(const std::string& text) {
  if (text == "conv") return ConvKind::conv;
  if (text == "aconv") return ConvKind::aconv;
  throw ArgumentError("unknown layer kind '" + text + "' (expected conv or aconv)");
}

std::uint64_t repeat_seed(std::uint64_t seed, std::size_t repeat) { return seed + repeat; }

}  // namespace aconv
