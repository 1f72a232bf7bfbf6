#include "aconv/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "aconv/filters.hpp"
#include "aconv/report.hpp"

namespace aconv {

namespace {

Eigen::MatrixXd envelope_matrix(const EnvelopeEval& e) { return e.u.matrix(); }

void snapshot(AdaptiveConv2D<double>& layer, std::vector<LearnedFilter>& out, bool after) {
  const auto& envs = layer.envelopes();
  const Tensord product = layer.product_kernel();
  const Tensord& w = layer.weights().value;
  for (std::size_t q = 0; q < out.size(); ++q) {
    auto& f = out[q];
    const Eigen::MatrixXd wm = from_tensor_kernel(w, 0, q), um = envelope_matrix(envs[q]),
                          uw = from_tensor_kernel(product, 0, q);
    if (after) {
      f.w_after = wm;
      f.u_after = um;
      f.uw_after = uw;
      f.sigma_after = layer.sigmas()[q];
    } else {
      f.w_before = wm;
      f.u_before = um;
      f.uw_before = uw;
      f.sigma_before = layer.sigmas()[q];
    }
  }
}

std::vector<std::string> matrix_header(std::size_t n) {
  std::vector<std::string> h{"filter", "row"};
  for (std::size_t c = 0; c < n; ++c) h.push_back("c" + std::to_string(c));
  return h;
}

}  // namespace

std::optional<std::size_t> FilterLearningReport::iterations_to(double fraction) const {
  for (std::size_t i = 0; i < loss.size(); ++i)
    if (loss[i] < fraction * loss.front()) return i;
  return std::nullopt;
}

FilterLearningReport run_filter_learning(const FilterLearningConfig& config) {
  return run_filter_learning(config, make_test_image(config.image_size, config.seed));
}

FilterLearningReport run_filter_learning(const FilterLearningConfig& config, const Tensord& image) {
  if (image.rank() != 3 || image.dim(2) != 1)
    throw DimensionError("filter learning needs a single-channel image [H,W,1], got " + to_string(image.shape()));
  if (image.dim(0) < 64 || image.dim(1) < 64)
    throw ArgumentError("filter learning needs an image of at least 64x64, got " + std::to_string(image.dim(0)) + "x" +
                        std::to_string(image.dim(1)));
  const std::size_t n = config.kernel_size;
  if (n < 9) throw ArgumentError("filter learning kernels must be at least 9x9 to hold the bank");

  auto bank = make_filter_bank();
  if (config.identity_target) bank.push_back({"identity", identity_kernel(static_cast<int>(n))});
  const std::size_t filters = bank.size();

  Tensord targets_kernel({n, n, 1, filters});
  FilterLearningReport report;
  report.filters.resize(filters);
  for (std::size_t q = 0; q < filters; ++q) {
    const Eigen::MatrixXd k = embed_centered(bank[q].kernel, static_cast<int>(n));
    report.filters[q].name = bank[q].name;
    report.filters[q].target = k;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) targets_kernel(i, j, 0, q) = k(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  Tensord target = cross_correlate(image, targets_kernel, 1, Padding::same);
  target.reshape({1, target.dim(0), target.dim(1), target.dim(2)});
  const Tensord input = image.reshaped({1, image.dim(0), image.dim(1), 1});

  auto init = clip_sigma(init_sigmas(filters, config.sigma_lo, config.sigma_hi), n);
  AdaptiveConv2D<double> layer("aconv", init_weights<double>({n, n, 1, filters}, InitScheme::glorot_uniform, config.seed),
                               std::vector<double>(init.begin(), init.end()), Padding::same, false);
  snapshot(layer, report.filters, false);

  const auto params = layer.parameters();
  SgdMomentum<double> optimiser(config.momentum, config.clip_value);
  auto record = [&](double loss) {
    report.loss.push_back(loss);
    const auto s = layer.sigmas();
    report.sigmas.emplace_back(s.begin(), s.end());
  };
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto out = layer.forward(input, Mode::train);
    const auto loss = mse_loss(out, target);
    if (!std::isfinite(loss.loss)) throw TrainingError("filter learning diverged at iteration " + std::to_string(it));
    record(loss.loss);
    layer.backward(loss.grad);
    optimiser.step(params, config.lr);
    clip_sigma<double>(layer.sigmas(), n);
  }
  record(mse_loss(layer.forward(input, Mode::eval), target).loss);

  snapshot(layer, report.filters, true);
  for (auto& f : report.filters) f.ncc = normalized_cross_correlation(f.uw_after, f.target);
  return report;
}

void write_filter_learning(const FilterLearningReport& report, const std::filesystem::path& dir) {
  if (report.filters.empty()) throw ArgumentError("filter learning report has no filters");
  const auto n = static_cast<std::size_t>(report.filters.front().target.rows());
  struct Dump {
    const char* file;
    Eigen::MatrixXd LearnedFilter::*field;
  };
  const Dump dumps[] = {{"kernels_W_before.csv", &LearnedFilter::w_before},   {"kernels_U_before.csv", &LearnedFilter::u_before},
                        {"kernels_UW_before.csv", &LearnedFilter::uw_before}, {"kernels_W_after.csv", &LearnedFilter::w_after},
                        {"kernels_U_after.csv", &LearnedFilter::u_after},     {"kernels_UW_after.csv", &LearnedFilter::uw_after},
                        {"targets.csv", &LearnedFilter::target}};
  for (const auto& d : dumps) {
    CsvWriter out(dir / d.file, matrix_header(n));
    for (const auto& f : report.filters) write_matrix_rows(out, {f.name}, f.*(d.field));
  }
  std::vector<std::string> header{"iteration", "mse"};
  for (const auto& f : report.filters) header.push_back("sigma_" + f.name);
  CsvWriter loss(dir / "loss.csv", header);
  for (std::size_t i = 0; i < report.loss.size(); ++i) {
    std::vector<std::string> cells{std::to_string(i), format_number(report.loss[i])};
    for (double s : report.sigmas[i]) cells.push_back(format_number(s));
    loss.row(cells);
  }
  CsvWriter summary(dir / "summary.csv", {"filter", "sigma_before", "sigma_after", "ncc"});
  for (const auto& f : report.filters)
    summary.row({f.name, format_number(f.sigma_before), format_number(f.sigma_after), format_number(f.ncc)});
}

// ---------------------------------------------------------------------------

std::string to_string(WeightDist d) { return d == WeightDist::uniform ? "uniform" : "normal"; }

std::vector<double> default_sigma_sweep(std::size_t n) {
  const double nd = static_cast<double>(n);
  std::vector<double> out{0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 5.0, 7.0, 9.0, 1.0 / nd, nd};
  std::erase_if(out, [&](double s) { return s > nd; });
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }), out.end());
  return out;
}

std::vector<VarianceRow> run_variance_study(const VarianceStudyConfig& config) {
  if (config.samples < 1000) throw ArgumentError("variance study needs at least 1000 samples");
  std::vector<VarianceRow> rows;
  for (std::size_t n : config.kernel_sizes) {
    const auto grid = make_grid(static_cast<int>(n));
    const auto sweep = config.sigmas.empty() ? default_sigma_sweep(n) : config.sigmas;
    for (WeightDist dist : {WeightDist::uniform, WeightDist::normal}) {
      std::mt19937_64 rng(config.seed * 1000003ULL + n * 2 + (dist == WeightDist::normal));
      Tensord w({n, n, config.samples});
      if (dist == WeightDist::uniform) {
        std::uniform_real_distribution<double> d(-1.0, 1.0);
        for (auto& v : w.values()) v = d(rng);
      } else {
        std::normal_distribution<double> d(0.0, 1.0);
        for (auto& v : w.values()) v = d(rng);
      }
      const double mvar_w = mvar(w);
      for (double sigma : sweep) {
        for (bool normalized : {true, false}) {
          const Eigen::ArrayXXd u = normalized ? envelope(grid, sigma).u : unnormalized_envelope(grid, sigma);
          Tensord env({n, n, 1});
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
              env(i, j, 0) = u(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
          const double mvar_wu = mvar(elementwise_multiply(w, env));
          rows.push_back({n, sigma, dist, normalized, mvar_w, mvar_wu, mvar_wu / mvar_w});
        }
      }
    }
  }
  return rows;
}

void write_variance_csv(const std::vector<VarianceRow>& rows, const std::filesystem::path& path) {
  CsvWriter out(path, {"n", "sigma", "dist", "normalized", "mvar_w", "mvar_wu", "ratio"});
  for (const auto& r : rows)
    out.row({std::to_string(r.n), format_number(r.sigma), to_string(r.dist), r.normalized ? "1" : "0",
             format_number(r.mvar_w), format_number(r.mvar_wu), format_number(r.ratio)});
}

std::vector<GradientVarianceRow> run_gradient_variance_study(const GradientVarianceConfig& config) {
  if (config.draws < 2) throw ArgumentError("gradient variance study needs at least two draws");
  const std::size_t n = config.kernel_size, size = config.input_size;
  if (size < n) throw ArgumentError("input must be at least as large as the kernel");
  std::vector<double> sigmas = config.sigmas;
  if (sigmas.empty())
    for (int i = 0; i < 10; ++i) sigmas.push_back(0.3 * std::pow(10.0, i / 9.0));
  const std::size_t out = size - n + 1;

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensord w({n, n, 1, 1});
  for (auto& v : w.values()) v = normal(rng);

  // dW samples per aperture: [n, n, draws]
  std::vector<Tensord> dws(sigmas.size(), Tensord({n, n, config.draws}));
  Tensord x({size, size, 1}), r({out, out, 1});
  for (std::size_t d = 0; d < config.draws; ++d) {
    for (auto& v : x.values()) v = normal(rng);
    for (auto& v : r.values()) v = normal(rng);
    for (std::size_t s = 0; s < sigmas.size(); ++s) {
      AdaptiveKernelParams<double> params(w, {sigmas[s]});
      const auto [o, cache] = aconv_forward(x, params, Padding::valid);
      const auto grads = aconv_backward(r, cache);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) dws[s](i, j, d) = grads.dW(i, j, 0, 0);
    }
  }
  std::vector<GradientVarianceRow> rows;
  for (std::size_t s = 0; s < sigmas.size(); ++s) rows.push_back({sigmas[s], mvar(dws[s])});
  return rows;
}

void write_gradient_variance_csv(const std::vector<GradientVarianceRow>& rows, std::size_t n,
                                 const std::filesystem::path& path) {
  double mean = 0;
  for (const auto& r : rows) mean += r.mvar_dw;
  mean /= static_cast<double>(rows.size());
  CsvWriter out(path, {"n", "sigma", "mvar_dw", "relative"});
  for (const auto& r : rows)
    out.row({std::to_string(n), format_number(r.sigma), format_number(r.mvar_dw), format_number(r.mvar_dw / mean)});
}

// ---------------------------------------------------------------------------

const VariantRun& ComparisonReport::run(ConvKind kind, std::size_t n) const {
  for (const auto& r : runs)
    if (r.kind == kind && r.kernel_size == n) return r;
  throw ArgumentError("no " + to_string(kind) + " run for kernel size " + std::to_string(n));
}

const SizeComparison& ComparisonReport::at(std::size_t n) const {
  for (const auto& s : sizes)
    if (s.kernel_size == n) return s;
  throw ArgumentError("no comparison for kernel size " + std::to_string(n));
}

ComparisonReport run_classifier_comparison(const DatasetBundle& data, const ClassifierConfig& config) {
  data.validate();
  config.train.validate();
  if (config.kernel_sizes.empty()) throw ArgumentError("no kernel sizes requested");
  for (std::size_t n : config.kernel_sizes)
    if (n != 3 && n != 5 && n != 7 && n != 9)
      throw ArgumentError("kernel size " + std::to_string(n) + " not in {3,5,7,9}");
  if (data.train_y.size() < config.train.batch_size)
    throw ArgumentError("dataset too small for batch size: " + std::to_string(data.train_y.size()) + " < " +
                        std::to_string(config.train.batch_size));

  ComparisonReport report;
  double best_mean = -1;
  for (std::size_t n : config.kernel_sizes) {
    SizeComparison cmp;
    cmp.kernel_size = n;
    for (ConvKind kind : {ConvKind::conv, ConvKind::aconv}) {
      NetworkSpec spec = config.network;
      spec.kind = kind;
      spec.kernel_size = n;
      const std::string label = to_string(kind) + std::to_string(n);
      VariantRun run{kind, n,
                     config.double_precision ? run_experiment<double>(spec, data, config.train, label)
                                             : run_experiment<float>(spec, data, config.train, label)};
      (kind == ConvKind::conv ? cmp.conv_mean : cmp.aconv_mean) = run.report.mean_best();
      (kind == ConvKind::conv ? cmp.conv_std : cmp.aconv_std) = run.report.std_best();
      report.runs.push_back(std::move(run));
    }
    const auto& a = report.runs[report.runs.size() - 1].report.best_test_results;
    const auto& c = report.runs[report.runs.size() - 2].report.best_test_results;
    if (a.size() >= 2 && c.size() >= 2) cmp.ttest = welch_ttest(a, c);
    const double top = std::max(cmp.conv_mean, cmp.aconv_mean);
    if (top > best_mean) {
      best_mean = top;
      report.best_size = n;
    }
    report.sizes.push_back(cmp);
  }
  return report;
}

void write_classifier_outputs(const ComparisonReport& report, const std::filesystem::path& dir) {
  CsvWriter summary(dir / "summary.csv", {"variant", "kernel_size", "repeat", "peak_acc"});
  CsvWriter failures(dir / "failures.csv", {"variant", "kernel_size", "repeat", "epoch", "batch", "message"});
  for (const auto& run : report.runs) {
    const std::string tag = to_string(run.kind) + std::to_string(run.kernel_size);
    for (std::size_t r = 0; r < run.report.best_test_results.size(); ++r)
      summary.row({to_string(run.kind), std::to_string(run.kernel_size), std::to_string(r),
                   format_number(run.report.best_test_results[r])});
    for (const auto& f : run.report.failures)
      failures.row({to_string(run.kind), std::to_string(run.kernel_size), std::to_string(f.repeat),
                    std::to_string(f.epoch), std::to_string(f.batch), "\"" + f.message + "\""});
    write_epoch_csv(run.report, dir / ("epochs_" + tag + ".csv"));
    if (!run.report.adaptive_layer_names.empty()) write_sigma_csv(run.report, dir / ("sigmas_" + tag + ".csv"));
    write_timing_csv(run.report, dir / "timing" / ("timing_" + tag + ".csv"));
  }
  CsvWriter cmp(dir / "comparison.csv", {"kernel_size", "conv_mean", "conv_std", "aconv_mean", "aconv_std",
                                         "conv_params", "aconv_params", "t", "p", "dof", "best_size"});
  for (const auto& s : report.sizes) {
    const auto t = s.ttest;
    cmp.row({std::to_string(s.kernel_size), format_number(s.conv_mean), format_number(s.conv_std),
             format_number(s.aconv_mean), format_number(s.aconv_std),
             std::to_string(report.run(ConvKind::conv, s.kernel_size).report.parameter_count),
             std::to_string(report.run(ConvKind::aconv, s.kernel_size).report.parameter_count),
             t ? format_number(t->t) : "nan", t ? format_number(t->p) : "nan", t ? format_number(t->dof) : "nan",
             s.kernel_size == report.best_size ? "1" : "0"});
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename LayerT>
struct BenchStack {
  LayerT first;
  LayerT second;
  SgdMomentum<float> optimiser{0.9, 1.0};

  double step(const Tensorf& x) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto h = first.forward(x, Mode::train);
    const auto y = second.forward(h, Mode::train);
    first.backward(second.backward(y));  // loss 0.5 * sum(y^2)
    std::vector<Parameter<float>*> params = first.parameters();
    for (auto* p : second.parameters()) params.push_back(p);
    optimiser.step(params, 1e-4);
    if constexpr (std::is_same_v<LayerT, AdaptiveConv2D<float>>) {
      clip_sigma<float>(first.sigmas(), first.kernel_size());
      clip_sigma<float>(second.sigmas(), second.kernel_size());
    }
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::vector<BenchRow> run_overhead_benchmark(const BenchConfig& config) {
  if (config.warmup < 3) throw ArgumentError("benchmark needs at least 3 warmup batches");
  std::vector<BenchRow> rows;
  if (config.batches == 0) return rows;
  for (std::size_t n : config.kernel_sizes) {
    for (std::size_t size : config.input_sizes) {
      const std::size_t q = config.filters;
      auto w1 = init_weights<float>({n, n, 1, q}, InitScheme::glorot_uniform, config.seed);
      auto w2 = init_weights<float>({n, n, q, q}, InitScheme::glorot_uniform, config.seed + 1);
      auto s = clip_sigma(init_sigmas(q), n);
      const std::vector<float> sig(s.begin(), s.end());
      BenchStack<Conv2D<float>> conv{Conv2D<float>("conv1", w1, Padding::same),
                                     Conv2D<float>("conv2", w2, Padding::same)};
      BenchStack<AdaptiveConv2D<float>> aconv{AdaptiveConv2D<float>("aconv1", w1, sig, Padding::same),
                                              AdaptiveConv2D<float>("aconv2", w2, sig, Padding::same)};
      std::mt19937_64 rng(config.seed + size);
      std::uniform_real_distribution<float> unit(0.0f, 1.0f);
      Tensorf x({config.batch_size, size, size, 1});
      for (auto& v : x.values()) v = unit(rng);

      for (std::size_t i = 0; i < config.warmup; ++i) {
        conv.step(x);
        aconv.step(x);
      }
      std::vector<double> tc, ta;
      for (std::size_t i = 0; i < config.batches; ++i) {
        if (i % 2 == 0) {
          tc.push_back(conv.step(x));
          ta.push_back(aconv.step(x));
        } else {
          ta.push_back(aconv.step(x));
          tc.push_back(conv.step(x));
        }
      }
      const double c = median(tc), a = median(ta);
      rows.push_back({n, size, c, a, a / c});
    }
  }
  return rows;
}

void write_bench_csv(const std::vector<BenchRow>& rows, const std::filesystem::path& path) {
  CsvWriter out(path, {"kernel_size", "input_size", "conv_ms", "aconv_ms", "ratio"});
  for (const auto& r : rows)
    out.row({std::to_string(r.kernel_size), std::to_string(r.input_size), format_number(r.conv_ms),
             format_number(r.aconv_ms), format_number(r.ratio)});
}

}  // namespace aconv
