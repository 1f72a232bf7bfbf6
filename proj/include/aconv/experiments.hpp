#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aconv/data.hpp"
#include "aconv/stats.hpp"
#include "aconv/training.hpp"

namespace aconv {

// ---------------------------------------------------------------------------
// Filter learning: one image in, nine filtered copies out
// ---------------------------------------------------------------------------

struct FilterLearningConfig {
  std::size_t image_size = 64;  // side of the generated image when none is supplied
  std::size_t kernel_size = 9;
  std::size_t iterations = 500;
  double lr = 0.1;
  double momentum = 0.9;
  double clip_value = 1.0;
  double sigma_lo = 0.1;
  double sigma_hi = 0.5;
  bool identity_target = false;
  std::uint64_t seed = 1;
};

struct LearnedFilter {
  std::string name;
  Eigen::MatrixXd target;
  Eigen::MatrixXd w_before, u_before, uw_before;
  Eigen::MatrixXd w_after, u_after, uw_after;
  double sigma_before = 0;
  double sigma_after = 0;
  double ncc = 0;  // Pearson correlation of uw_after with target
};

struct FilterLearningReport {
  std::vector<double> loss;                   // MSE before each update, then once after the last
  std::vector<std::vector<double>> sigmas;    // [iteration][filter], same indexing as loss
  std::vector<LearnedFilter> filters;
  double initial_mse() const { return loss.front(); }
  double final_mse() const { return loss.back(); }
  /// First iteration whose loss is below `fraction` of the initial loss, if any.
  std::optional<std::size_t> iterations_to(double fraction) const;
};

/// Trains nine (or ten with the identity target) adaptive 9x9 kernels to
/// reproduce the filter bank applied to `image` ([H,W,1], H,W >= 64).
FilterLearningReport run_filter_learning(const FilterLearningConfig& config, const Tensord& image);
FilterLearningReport run_filter_learning(const FilterLearningConfig& config);

/// kernels_{W,U,UW}_{before,after}.csv, targets.csv, loss.csv, summary.csv.
void write_filter_learning(const FilterLearningReport& report, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Variance studies
// ---------------------------------------------------------------------------

enum class WeightDist { uniform, normal };
std::string to_string(WeightDist d);

struct VarianceStudyConfig {
  std::vector<std::size_t> kernel_sizes{3, 5, 7, 9};
  /// Empty means the default sweep: a fixed ladder plus 1/n and n, restricted to [0.1, n].
  std::vector<double> sigmas;
  std::size_t samples = 10000;
  std::uint64_t seed = 1;
};

struct VarianceRow {
  std::size_t n = 0;
  double sigma = 0;
  WeightDist dist = WeightDist::uniform;
  bool normalized = true;
  double mvar_w = 0;
  double mvar_wu = 0;
  double ratio = 0;
};

std::vector<double> default_sigma_sweep(std::size_t n);

/// MVar(W) against MVar(W o U) for sampled weight matrices, with and without envelope normalisation.
std::vector<VarianceRow> run_variance_study(const VarianceStudyConfig& config);
/// Header: n,sigma,dist,normalized,mvar_w,mvar_wu,ratio
void write_variance_csv(const std::vector<VarianceRow>& rows, const std::filesystem::path& path);

struct GradientVarianceConfig {
  std::size_t kernel_size = 5;
  std::vector<double> sigmas;  // empty: 10 log-spaced values over [0.3, 3]
  std::size_t draws = 10000;
  std::size_t input_size = 8;
  std::uint64_t seed = 1;
};

struct GradientVarianceRow {
  double sigma = 0;
  double mvar_dw = 0;
};

/// MVar of dW through aconv_backward on i.i.d. zero-mean inputs and upstream
/// gradients. The same draws are reused at every aperture.
std::vector<GradientVarianceRow> run_gradient_variance_study(const GradientVarianceConfig& config);
/// Header: n,sigma,mvar_dw,relative
void write_gradient_variance_csv(const std::vector<GradientVarianceRow>& rows, std::size_t n,
                                 const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Classifier comparison
// ---------------------------------------------------------------------------

struct ClassifierConfig {
  std::vector<std::size_t> kernel_sizes{7};
  TrainConfig train;
  NetworkSpec network;
  bool double_precision = false;
};

struct VariantRun {
  ConvKind kind = ConvKind::conv;
  std::size_t kernel_size = 0;
  ExperimentReport report;
};

struct SizeComparison {
  std::size_t kernel_size = 0;
  double conv_mean = 0, conv_std = 0;
  double aconv_mean = 0, aconv_std = 0;
  std::optional<TTestResult> ttest;  // ACONV minus CONV; absent with fewer than two repeats
};

struct ComparisonReport {
  std::vector<VariantRun> runs;
  std::vector<SizeComparison> sizes;
  std::size_t best_size = 0;  // size with the highest mean peak accuracy of either variant

  const VariantRun& run(ConvKind kind, std::size_t n) const;
  const SizeComparison& at(std::size_t n) const;
};

ComparisonReport run_classifier_comparison(const DatasetBundle& data, const ClassifierConfig& config);

/// summary.csv, comparison.csv, failures.csv, epochs_/sigmas_/timing_<variant><n>.csv.
void write_classifier_outputs(const ComparisonReport& report, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Step-time overhead
// ---------------------------------------------------------------------------

struct BenchConfig {
  std::vector<std::size_t> kernel_sizes{3, 5, 7, 9};
  std::vector<std::size_t> input_sizes{32, 128};
  std::size_t batches = 10;
  std::size_t warmup = 3;
  std::size_t batch_size = 8;
  std::size_t filters = 16;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::size_t kernel_size = 0;
  std::size_t input_size = 0;
  double conv_ms = 0;
  double aconv_ms = 0;
  double ratio = 0;
};

/// Median forward+backward+update time of a two-layer correlation stack
/// (1 -> Q -> Q channels, same padding) for CONV and ACONV, timed in
/// alternation. Zero batches yields no rows.
std::vector<BenchRow> run_overhead_benchmark(const BenchConfig& config);
/// Header: kernel_size,input_size,conv_ms,aconv_ms,ratio
void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path);

}  // namespace aconv
