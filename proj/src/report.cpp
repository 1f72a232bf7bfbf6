#include "aconv/report.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <sstream>

namespace aconv {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct CsvWriter::Impl {
  std::ofstream out;
};

CsvWriter::CsvWriter(const std::filesystem::path& path, std::vector<std::string> header)
    : impl_(std::make_unique<Impl>()), columns_(header.size()) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  impl_->out.open(path, std::ios::binary);
  if (!impl_->out) throw FormatError("cannot write " + path.string());
  row(header);
}

CsvWriter::~CsvWriter() = default;

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != columns_)
    throw DimensionError("CSV row has " + std::to_string(cells.size()) + " cells, header has " +
                         std::to_string(columns_));
  for (std::size_t i = 0; i < cells.size(); ++i) impl_->out << (i ? "," : "") << cells[i];
  impl_->out << '\n';
}

void write_epoch_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  std::vector<std::string> header{"repeat", "epoch", "train_loss", "val_loss", "val_acc", "lr"};
  for (const auto& name : report.adaptive_layer_names) header.push_back("mean_sigma_" + name);
  CsvWriter out(path, header);
  for (const auto& rec : report.epochs) {
    std::vector<std::string> cells{std::to_string(rec.repeat), std::to_string(rec.epoch),
                                   format_number(rec.train_loss), format_number(rec.val_loss),
                                   format_number(rec.val_acc),    format_number(rec.lr)};
    for (const auto& layer : rec.sigmas) {
      double total = 0;
      for (double s : layer) total += s;
      cells.push_back(format_number(total / static_cast<double>(layer.size())));
    }
    out.row(cells);
  }
}

void write_summary_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  CsvWriter out(path, {"repeat", "peak_acc"});
  for (std::size_t r = 0; r < report.best_test_results.size(); ++r)
    out.row({std::to_string(r), format_number(report.best_test_results[r])});
}

void write_sigma_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  CsvWriter out(path, {"repeat", "epoch", "layer", "filter", "sigma"});
  for (const auto& rec : report.epochs)
    for (std::size_t l = 0; l < rec.sigmas.size(); ++l)
      for (std::size_t q = 0; q < rec.sigmas[l].size(); ++q)
        out.row({std::to_string(rec.repeat), std::to_string(rec.epoch), report.adaptive_layer_names.at(l),
                 std::to_string(q), format_number(rec.sigmas[l][q])});
}

void write_timing_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  CsvWriter out(path, {"step", "seconds"});
  for (std::size_t i = 0; i < report.step_seconds.size(); ++i)
    out.row({std::to_string(i), format_number(report.step_seconds[i])});
}

void write_matrix_rows(CsvWriter& out, const std::vector<std::string>& prefix, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<std::string> cells = prefix;
    cells.push_back(std::to_string(r));
    for (Eigen::Index c = 0; c < m.cols(); ++c) cells.push_back(format_number(m(r, c)));
    out.row(cells);
  }
}

std::string git_blob_hash(std::span<const std::uint8_t> bytes) {
  const std::string prefix = "blob " + std::to_string(bytes.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, prefix.data(), prefix.size());
  EVP_DigestUpdate(ctx, bytes.data(), bytes.size());
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string git_blob_hash_file(const std::filesystem::path& path) { return git_blob_hash(read_file(path.string())); }

nlohmann::ordered_json to_json(const TrainConfig& c) {
  return {{"repeats", c.repeats},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr_multiplier", format_number(c.lr_multiplier)},
          {"learning_rate", format_number(c.learning_rate())},
          {"momentum", format_number(c.momentum)},
          {"clip_value", format_number(c.clip_value)},
          {"sigma_init_range", {format_number(c.sigma_lo), format_number(c.sigma_hi)}},
          {"plateau_factor", format_number(c.plateau_factor)},
          {"plateau_patience", c.plateau_patience},
          {"seed", c.seed}};
}

nlohmann::ordered_json to_json(const NetworkSpec& s) {
  return {{"kind", to_string(s.kind)},
          {"kernel_size", s.kernel_size},
          {"conv_layers", s.conv_layers},
          {"filters", s.filters},
          {"dense_units", s.dense_units},
          {"dropout", format_number(s.dropout)},
          {"batch_norm", s.batch_norm},
          {"bn_momentum", format_number(s.bn_momentum)},
          {"padding", to_string(s.padding)},
          {"init", s.init == InitScheme::glorot_uniform ? "glorot-uniform" : "he-normal"}};
}

void write_manifest(const std::filesystem::path& path, const std::string& command, nlohmann::ordered_json config,
                    const std::vector<std::filesystem::path>& inputs) {
  nlohmann::ordered_json manifest;
  manifest["command"] = command;
  manifest["config"] = std::move(config);
  manifest["config_hash"] = [&] {
    const std::string text = manifest["config"].dump();
    return git_blob_hash(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }();
  auto& files = manifest["inputs"] = nlohmann::ordered_json::array();
  for (const auto& p : inputs) files.push_back({{"path", p.filename().string()}, {"blob", git_blob_hash_file(p)}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << manifest.dump(2) << '\n';
}

std::string role_name(ParamRole role) {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::aperture: return "aperture";
    case ParamRole::scale: return "scale";
    case ParamRole::shift: return "shift";
    case ParamRole::running_mean: return "running_mean";
    case ParamRole::running_var: return "running_var";
  }
  return "unknown";
}

namespace detail {

void append_le64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t read_le64(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (bytes.size() < offset + 8) throw FormatError("checkpoint: truncated at byte offset " + std::to_string(offset));
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[offset + i]} << (8 * i);
  return v;
}

}  // namespace detail

}  // namespace aconv
