#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "aconv/experiments.hpp"
#include "aconv/report.hpp"

using namespace aconv;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("aconv_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string first_line(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  return line;
}

std::size_t line_count(const fs::path& path) {
  std::ifstream in(path);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(Report, FormatNumber) {
  EXPECT_EQ(format_number(0.5), "0.5");
  EXPECT_EQ(format_number(1.0 / 3), "0.3333333333");
  EXPECT_EQ(format_number(12), "12");
}

TEST(Report, CsvRowWidthIsChecked) {
  const auto dir = scratch("csv");
  CsvWriter out(dir / "sub" / "x.csv", {"a", "b"});
  out.row({"1", "2"});
  EXPECT_THROW(out.row({"1"}), DimensionError);
  EXPECT_EQ(out.columns(), 2u);
}

TEST(Report, GitBlobHash) {
  EXPECT_EQ(git_blob_hash({}), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  const std::string hello = "hello\n";
  EXPECT_EQ(git_blob_hash(std::vector<std::uint8_t>(hello.begin(), hello.end())),
            "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Report, ManifestHashesInputs) {
  const auto dir = scratch("manifest");
  const std::string hello = "hello\n";
  write_file((dir / "in.txt").string(), std::vector<std::uint8_t>(hello.begin(), hello.end()));
  write_manifest(dir / "manifest.json", "aconv test", to_json(TrainConfig{}), {dir / "in.txt"});
  const auto text = slurp(dir / "manifest.json");
  const auto j = nlohmann::json::parse(text);
  EXPECT_EQ(j["command"], "aconv test");
  EXPECT_EQ(j["inputs"][0]["blob"], "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(j["config"]["epochs"], 15);
  EXPECT_TRUE(j.contains("config_hash"));
}

TEST(VarianceStudy, CsvShapeAndIdentities) {
  VarianceStudyConfig c;
  c.kernel_sizes = {3, 5};
  c.sigmas = {0.5, 1.0};
  c.samples = 2000;
  const auto rows = run_variance_study(c);
  // n x sigma x dist x normalised
  ASSERT_EQ(rows.size(), 2u * 2u * 2u * 2u);
  for (const auto& r : rows) {
    EXPECT_GT(r.mvar_w, 0.0);
    EXPECT_NEAR(r.ratio, r.mvar_wu / r.mvar_w, 1e-12);
    if (r.normalized) EXPECT_NEAR(r.ratio, 1.0, 0.15) << r.n << " " << r.sigma;
  }
  const auto dir = scratch("variance");
  write_variance_csv(rows, dir / "variance.csv");
  EXPECT_EQ(first_line(dir / "variance.csv"), "n,sigma,dist,normalized,mvar_w,mvar_wu,ratio");
  EXPECT_EQ(line_count(dir / "variance.csv"), rows.size() + 1);
  c.samples = 10;
  EXPECT_THROW(run_variance_study(c), ArgumentError);
}

TEST(VarianceStudy, DefaultSweepBounds) {
  for (std::size_t n : {3u, 9u}) {
    const auto s = default_sigma_sweep(n);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    EXPECT_LE(s.back(), static_cast<double>(n));
    EXPECT_NE(std::find(s.begin(), s.end(), 1.0 / n), s.end());
    EXPECT_NE(std::find(s.begin(), s.end(), static_cast<double>(n)), s.end());
  }
}

TEST(GradientVariance, RelativeColumn) {
  GradientVarianceConfig c;
  c.sigmas = {0.3, 1.0, 3.0};
  c.draws = 200;
  const auto rows = run_gradient_variance_study(c);
  ASSERT_EQ(rows.size(), 3u);
  const auto dir = scratch("gradvar");
  write_gradient_variance_csv(rows, 5, dir / "g.csv");
  EXPECT_EQ(first_line(dir / "g.csv"), "n,sigma,mvar_dw,relative");
  c.draws = 1;
  EXPECT_THROW(run_gradient_variance_study(c), ArgumentError);
}

TEST(FilterLearning, ShortRunReducesLoss) {
  FilterLearningConfig c;
  c.iterations = 60;
  const auto r = run_filter_learning(c);
  ASSERT_EQ(r.loss.size(), 61u);
  ASSERT_EQ(r.sigmas.size(), 61u);
  ASSERT_EQ(r.filters.size(), 9u);
  EXPECT_LT(r.final_mse(), 0.2 * r.initial_mse());
  for (const auto& f : r.filters) {
    EXPECT_EQ(f.target.rows(), 9);
    EXPECT_GE(f.sigma_after, 1.0 / 9);
    EXPECT_LE(f.sigma_after, 9.0);
  }
  const auto dir = scratch("filters");
  write_filter_learning(r, dir);
  for (const char* name : {"kernels_W_before.csv", "kernels_U_after.csv", "kernels_UW_after.csv", "targets.csv",
                           "loss.csv", "summary.csv"})
    EXPECT_TRUE(fs::exists(dir / name)) << name;
  EXPECT_EQ(first_line(dir / "summary.csv"), "filter,sigma_before,sigma_after,ncc");
  EXPECT_EQ(line_count(dir / "loss.csv"), 62u);
}

TEST(FilterLearning, IdentityTargetAddsFilter) {
  FilterLearningConfig c;
  c.iterations = 2;
  c.identity_target = true;
  EXPECT_EQ(run_filter_learning(c).filters.size(), 10u);
}

TEST(FilterLearning, InputValidation) {
  FilterLearningConfig c;
  c.iterations = 1;
  EXPECT_THROW(run_filter_learning(c, Tensord({32, 32, 1})), ArgumentError);
  EXPECT_THROW(run_filter_learning(c, Tensord({64, 64, 2})), DimensionError);
  c.kernel_size = 7;
  EXPECT_THROW(run_filter_learning(c), ArgumentError);
}

TEST(FilterLearning, IterationsTo) {
  FilterLearningReport r;
  r.loss = {1.0, 0.5, 0.04, 0.01};
  EXPECT_EQ(r.iterations_to(0.05), std::optional<std::size_t>(2));
  EXPECT_EQ(r.iterations_to(0.001), std::nullopt);
}

TEST(Bench, ZeroBatchesHeaderOnly) {
  BenchConfig c;
  c.batches = 0;
  const auto rows = run_overhead_benchmark(c);
  EXPECT_TRUE(rows.empty());
  const auto dir = scratch("bench");
  write_bench_csv(rows, dir / "bench.csv");
  EXPECT_EQ(slurp(dir / "bench.csv"), "kernel_size,input_size,conv_ms,aconv_ms,ratio\n");
}

TEST(Bench, WarmupFloorAndSmallRun) {
  BenchConfig c;
  c.warmup = 2;
  EXPECT_THROW(run_overhead_benchmark(c), ArgumentError);
  c.warmup = 3;
  c.batches = 2;
  c.kernel_sizes = {3};
  c.input_sizes = {16};
  c.filters = 4;
  const auto rows = run_overhead_benchmark(c);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_GT(rows[0].conv_ms, 0.0);
  EXPECT_NEAR(rows[0].ratio, rows[0].aconv_ms / rows[0].conv_ms, 1e-12);
}

namespace {

ClassifierConfig tiny_classifier() {
  ClassifierConfig c;
  c.kernel_sizes = {3};
  c.train.repeats = 2;
  c.train.epochs = 2;
  c.train.batch_size = 16;
  c.train.lr_multiplier = 1.0;
  c.network.filters = 4;
  c.network.dense_units = 16;
  c.network.bn_momentum = 0.9;
  return c;
}

}  // namespace

TEST(Classifier, DatasetTooSmall) {
  const auto data = synth_dataset(SynthKind::blobs, 2, 1);
  auto c = tiny_classifier();
  c.train.batch_size = 128;
  EXPECT_THROW(run_classifier_comparison(data, c), ArgumentError);
  c = tiny_classifier();
  c.kernel_sizes = {4};
  EXPECT_THROW(run_classifier_comparison(synth_dataset(SynthKind::blobs, 16, 1), c), ArgumentError);
}

TEST(Classifier, ComparisonAndOutputs) {
  const auto data = synth_dataset(SynthKind::bars, 16, 2);
  const auto c = tiny_classifier();
  const auto r = run_classifier_comparison(data, c);
  ASSERT_EQ(r.runs.size(), 2u);
  const auto& cmp = r.at(3);
  ASSERT_TRUE(cmp.ttest.has_value());
  EXPECT_EQ(r.best_size, 3u);
  EXPECT_DOUBLE_EQ(cmp.conv_mean, r.run(ConvKind::conv, 3).report.mean_best());
  EXPECT_THROW(r.at(5), ArgumentError);

  const auto first = scratch("classify_a"), second = scratch("classify_b");
  write_classifier_outputs(r, first);
  write_classifier_outputs(run_classifier_comparison(data, c), second);
  for (const auto& entry : fs::directory_iterator(first)) {
    if (!entry.is_regular_file()) continue;
    EXPECT_EQ(slurp(entry.path()), slurp(second / entry.path().filename())) << entry.path().filename();
  }
  EXPECT_TRUE(fs::exists(first / "comparison.csv"));
  EXPECT_TRUE(fs::exists(first / "summary.csv"));
  EXPECT_EQ(line_count(first / "summary.csv"), 1u + 2u * 2u);
}
