// aconv: filter learning, variance studies, classifier comparison and step-time benchmark.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "aconv/experiments.hpp"
#include "aconv/report.hpp"

namespace fs = std::filesystem;
using namespace aconv;

namespace {

struct Common {
  std::uint64_t seed = 1;
  std::string out;
};

std::string default_out_dir() {
  const char* env = std::getenv("ACONV_OUT_DIR");
  return env && *env ? env : "aconv_out";
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--out", c.out, "Output directory (default: $ACONV_OUT_DIR or ./aconv_out)");
}

fs::path out_dir(const Common& c, const std::string& sub) { return fs::path(c.out.empty() ? default_out_dir() : c.out) / sub; }

void emit_error(const std::string& kind, const std::string& message) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

// ---------------------------------------------------------------------------

struct FiltersArgs {
  Common common;
  FilterLearningConfig config;
  std::string image;
};

int run_filters(const FiltersArgs& a) {
  FilterLearningConfig cfg = a.config;
  cfg.seed = a.common.seed;
  const auto dir = out_dir(a.common, "filters");
  const auto report = a.image.empty() ? run_filter_learning(cfg) : run_filter_learning(cfg, load_pgm(a.image));
  write_filter_learning(report, dir);
  nlohmann::ordered_json echo{{"image", a.image.empty() ? "generated" : fs::path(a.image).filename().string()},
                              {"image_size", cfg.image_size},
                              {"kernel_size", cfg.kernel_size},
                              {"iterations", cfg.iterations},
                              {"lr", format_number(cfg.lr)},
                              {"momentum", format_number(cfg.momentum)},
                              {"clip_value", format_number(cfg.clip_value)},
                              {"identity_target", cfg.identity_target},
                              {"seed", cfg.seed}};
  std::vector<fs::path> inputs;
  if (!a.image.empty()) inputs.push_back(a.image);
  write_manifest(dir / "manifest.json", "filters", echo, inputs);
  std::cout << "initial mse " << format_number(report.initial_mse()) << ", final mse "
            << format_number(report.final_mse()) << '\n';
  for (const auto& f : report.filters)
    std::cout << "  " << f.name << ": ncc " << format_number(f.ncc) << ", sigma " << format_number(f.sigma_before)
              << " -> " << format_number(f.sigma_after) << '\n';
  std::cout << "wrote " << dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct VarianceArgs {
  Common common;
  VarianceStudyConfig config;
  GradientVarianceConfig gradient;
  bool skip_gradient = false;
};

int run_variance(const VarianceArgs& a) {
  VarianceStudyConfig cfg = a.config;
  cfg.seed = a.common.seed;
  const auto dir = out_dir(a.common, "variance");
  write_variance_csv(run_variance_study(cfg), dir / "variance.csv");
  nlohmann::ordered_json echo{{"kernel_sizes", cfg.kernel_sizes}, {"samples", cfg.samples}, {"seed", cfg.seed}};
  if (!a.skip_gradient) {
    GradientVarianceConfig g = a.gradient;
    g.seed = a.common.seed;
    write_gradient_variance_csv(run_gradient_variance_study(g), g.kernel_size, dir / "gradient_variance.csv");
    echo["gradient"] = {{"kernel_size", g.kernel_size}, {"draws", g.draws}, {"input_size", g.input_size}};
  }
  write_manifest(dir / "manifest.json", "variance", echo, {});
  std::cout << "wrote " << dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct ClassifyArgs {
  Common common;
  ClassifierConfig config;
  std::string dataset = "idx";
  std::string data_dir = "data/mnist_subset";
  std::string train_images, train_labels, test_images, test_labels;
  std::size_t max_train = 0, max_test = 0;
  std::size_t synth_per_class = 200;
  std::string padding = "valid";
  std::string init = "glorot-uniform";
  bool full = false;
};

int run_classify(ClassifyArgs a) {
  ClassifierConfig cfg = a.config;
  cfg.train.seed = a.common.seed;
  cfg.network.padding = a.padding == "same" ? Padding::same : Padding::valid;
  cfg.network.init = parse_init_scheme(a.init);
  if (a.full) {
    // multi-hour reference protocol on the complete dataset
    cfg.kernel_sizes = {3, 5, 7, 9};
    cfg.train.repeats = 5;
    cfg.train.epochs = 100;
    cfg.network.padding = Padding::same;
  }

  DatasetBundle data;
  std::vector<fs::path> inputs;
  if (a.dataset == "idx") {
    const fs::path d(a.data_dir);
    auto pick = [&](const std::string& given, const char* file) { return given.empty() ? d / file : fs::path(given); };
    inputs = {pick(a.train_images, "train-images-idx3-ubyte"), pick(a.train_labels, "train-labels-idx1-ubyte"),
              pick(a.test_images, "t10k-images-idx3-ubyte"), pick(a.test_labels, "t10k-labels-idx1-ubyte")};
    data = load_idx_dataset(inputs[0].string(), inputs[1].string(), inputs[2].string(), inputs[3].string(),
                            a.max_train, a.max_test, d.filename().string());
  } else if (a.dataset.rfind("synth-", 0) == 0) {
    data = synth_dataset(parse_synth_kind(a.dataset.substr(6)), a.synth_per_class, a.common.seed);
  } else {
    throw ArgumentError("unknown dataset '" + a.dataset + "' (expected idx, synth-blobs or synth-bars)");
  }

  const auto dir = out_dir(a.common, "classify");
  const auto report = run_classifier_comparison(data, cfg);
  write_classifier_outputs(report, dir);
  nlohmann::ordered_json echo{{"dataset", data.name},
                              {"train_images", data.train_y.size()},
                              {"test_images", data.test_y.size()},
                              {"kernel_sizes", cfg.kernel_sizes},
                              {"precision", cfg.double_precision ? "float64" : "float32"},
                              {"full", a.full},
                              {"train", to_json(cfg.train)},
                              {"network", to_json(cfg.network)}};
  write_manifest(dir / "manifest.json", "classify", echo, inputs);

  for (const auto& s : report.sizes) {
    std::cout << s.kernel_size << "x" << s.kernel_size << ": conv " << format_number(100 * s.conv_mean) << " +- "
              << format_number(100 * s.conv_std) << ", aconv " << format_number(100 * s.aconv_mean) << " +- "
              << format_number(100 * s.aconv_std);
    if (s.ttest) std::cout << ", t " << format_number(s.ttest->t) << " p " << format_number(s.ttest->p);
    std::cout << (s.kernel_size == report.best_size ? "  [best]" : "") << '\n';
  }
  std::cout << "wrote " << dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  Common common;
  BenchConfig config;
};

int run_bench(const BenchArgs& a) {
  BenchConfig cfg = a.config;
  cfg.seed = a.common.seed;
  const auto dir = out_dir(a.common, "bench");
  const auto rows = run_overhead_benchmark(cfg);
  write_bench_csv(rows, dir / "bench.csv");
  write_manifest(dir / "manifest.json", "bench",
                 {{"kernel_sizes", cfg.kernel_sizes},
                  {"input_sizes", cfg.input_sizes},
                  {"batches", cfg.batches},
                  {"warmup", cfg.warmup},
                  {"batch_size", cfg.batch_size},
                  {"filters", cfg.filters}},
                 {});
  for (const auto& r : rows)
    std::cout << r.kernel_size << "x" << r.kernel_size << " @ " << r.input_size << ": conv "
              << format_number(r.conv_ms) << " ms, aconv " << format_number(r.aconv_ms) << " ms, ratio "
              << format_number(r.ratio) << '\n';
  std::cout << "wrote " << dir.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive-aperture convolution experiments"};
  app.require_subcommand(1);

  FiltersArgs fa;
  auto* filters = app.add_subcommand("filters", "Learn the nine-kernel filter bank from one image");
  add_common(filters, fa.common);
  filters->add_option("--image", fa.image, "Grayscale PGM input (default: generated test image)");
  filters->add_option("--image-size", fa.config.image_size, "Side of the generated image")->capture_default_str();
  filters->add_option("--iterations", fa.config.iterations, "Training updates")->capture_default_str();
  filters->add_option("--lr", fa.config.lr, "Learning rate")->capture_default_str();
  filters->add_option("--momentum", fa.config.momentum, "Momentum")->capture_default_str();
  filters->add_flag("--identity", fa.config.identity_target, "Add a delta kernel as a tenth target");

  VarianceArgs va;
  auto* variance = app.add_subcommand("variance", "Weight and gradient variance under the envelope");
  add_common(variance, va.common);
  variance->add_option("--kernel-sizes", va.config.kernel_sizes, "Kernel sizes")->capture_default_str();
  variance->add_option("--sigmas", va.config.sigmas, "Aperture sweep (default ladder per size)");
  variance->add_option("--samples", va.config.samples, "Weight samples per cell")->capture_default_str();
  variance->add_option("--gradient-kernel-size", va.gradient.kernel_size)->capture_default_str();
  variance->add_option("--gradient-draws", va.gradient.draws)->capture_default_str();
  variance->add_flag("--skip-gradient", va.skip_gradient, "Only the weight variance sweep");

  ClassifyArgs ca;
  ca.config.train.repeats = 3;  // desk-scale protocol
  auto* classify = app.add_subcommand("classify", "CONV vs ACONV classifier comparison");
  add_common(classify, ca.common);
  classify->add_option("--dataset", ca.dataset, "idx | synth-blobs | synth-bars")->capture_default_str();
  classify->add_option("--data-dir", ca.data_dir, "Directory with the four IDX files")->capture_default_str();
  classify->add_option("--train-images", ca.train_images);
  classify->add_option("--train-labels", ca.train_labels);
  classify->add_option("--test-images", ca.test_images);
  classify->add_option("--test-labels", ca.test_labels);
  classify->add_option("--max-train", ca.max_train, "Keep the first N training records (0 = all)");
  classify->add_option("--max-test", ca.max_test, "Keep the first N test records (0 = all)");
  classify->add_option("--synth-per-class", ca.synth_per_class)->capture_default_str();
  classify->add_option("--kernel-sizes", ca.config.kernel_sizes, "Subset of 3 5 7 9")->capture_default_str();
  classify->add_option("--repeats", ca.config.train.repeats)->capture_default_str();
  classify->add_option("--epochs", ca.config.train.epochs)->capture_default_str();
  classify->add_option("--batch-size", ca.config.train.batch_size)->capture_default_str();
  classify->add_option("--lr-multiplier", ca.config.train.lr_multiplier, "Initial rate is 0.1 x this")
      ->capture_default_str();
  classify->add_option("--filters", ca.config.network.filters)->capture_default_str();
  classify->add_option("--dense-units", ca.config.network.dense_units)->capture_default_str();
  classify->add_option("--bn-momentum", ca.config.network.bn_momentum)->capture_default_str();
  classify->add_option("--padding", ca.padding)->check(CLI::IsMember({"valid", "same"}))->capture_default_str();
  classify->add_option("--init", ca.init)->check(CLI::IsMember({"glorot-uniform", "he-normal"}))->capture_default_str();
  classify->add_flag("--double", ca.config.double_precision, "Train in float64");
  classify->add_flag("--full", ca.full, "Full protocol: sizes 3-9, 5 repeats, 100 epochs, same padding (hours)");

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "ACONV/CONV step-time ratio");
  add_common(bench, ba.common);
  bench->add_option("--kernel-sizes", ba.config.kernel_sizes)->capture_default_str();
  bench->add_option("--input-sizes", ba.config.input_sizes)->capture_default_str();
  bench->add_option("--batches", ba.config.batches)->capture_default_str();
  bench->add_option("--warmup", ba.config.warmup)->capture_default_str();
  bench->add_option("--batch-size", ba.config.batch_size)->capture_default_str();
  bench->add_option("--filters", ba.config.filters)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    emit_error("usage", e.what());
    return 2;
  }

  try {
    if (*filters) return run_filters(fa);
    if (*variance) return run_variance(va);
    if (*classify) return run_classify(ca);
    if (*bench) return run_bench(ba);
  } catch (const FormatError& e) {
    emit_error("format", e.what());
  } catch (const ArgumentError& e) {
    emit_error("argument", e.what());
  } catch (const DimensionError& e) {
    emit_error("dimension", e.what());
  } catch (const TrainingError& e) {
    emit_error("training", e.what());
  } catch (const std::exception& e) {
    emit_error("internal", e.what());
  }
  return 1;
}
