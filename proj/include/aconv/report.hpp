#pragma once

#include <Eigen/Core>
#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aconv/data.hpp"
#include "aconv/network.hpp"
#include "aconv/training.hpp"

namespace aconv {

/// Deterministic decimal rendering used by every CSV and manifest.
std::string format_number(double v);

/// Comma-separated writer with a mandatory header row.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, std::vector<std::string> header);
  ~CsvWriter();
  CsvWriter(const CsvWriter&) = delete;
  CsvWriter& operator=(const CsvWriter&) = delete;

  void row(const std::vector<std::string>& cells);
  std::size_t columns() const { return columns_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::size_t columns_;
};

/// Header: repeat,epoch,train_loss,val_loss,val_acc,lr,mean_sigma_<layer>...
void write_epoch_csv(const ExperimentReport& report, const std::filesystem::path& path);
/// Header: repeat,peak_acc
void write_summary_csv(const ExperimentReport& report, const std::filesystem::path& path);
/// Header: repeat,epoch,layer,filter,sigma
void write_sigma_csv(const ExperimentReport& report, const std::filesystem::path& path);
/// Header: step,seconds (timing; not deterministic)
void write_timing_csv(const ExperimentReport& report, const std::filesystem::path& path);

/// Rows of a square matrix as a CSV block: prefix cells then c0..c{n-1}.
void write_matrix_rows(CsvWriter& out, const std::vector<std::string>& prefix, const Eigen::MatrixXd& m);

/// SHA-1 of "blob <size>\0" + content, hex encoded (same id git assigns a file).
std::string git_blob_hash(std::span<const std::uint8_t> bytes);
std::string git_blob_hash_file(const std::filesystem::path& path);

nlohmann::ordered_json to_json(const TrainConfig& config);
nlohmann::ordered_json to_json(const NetworkSpec& spec);

/// Writes manifest.json: the config echo plus content hashes of every input file.
void write_manifest(const std::filesystem::path& path, const std::string& command, nlohmann::ordered_json config,
                    const std::vector<std::filesystem::path>& inputs);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------
//
// Layout: 8-byte magic "ACONVCK1", u64 little-endian header length, UTF-8 JSON
// header, then every tensor as little-endian IEEE-754 binary64 in manifest order.

inline constexpr char kCheckpointMagic[9] = "ACONVCK1";

std::string role_name(ParamRole role);

namespace detail {

void append_le64(std::vector<std::uint8_t>& out, std::uint64_t v);
std::uint64_t read_le64(std::span<const std::uint8_t> bytes, std::size_t offset);

}  // namespace detail

template <typename Scalar>
std::vector<std::uint8_t> encode_checkpoint(Sequential<Scalar>& net) {
  nlohmann::ordered_json header;
  header["format"] = "aconv-checkpoint";
  header["version"] = 1;
  header["scalar_bytes"] = 8;
  auto entries = nlohmann::ordered_json::array();
  auto apertures = nlohmann::ordered_json::object();
  std::size_t offset = 0;
  for (std::size_t li = 0; li < net.size(); ++li) {
    auto& layer = net.layer(li);
    std::vector<Parameter<Scalar>*> items = layer.parameters();
    for (auto* b : layer.buffers()) items.push_back(b);
    for (auto* p : items) {
      entries.push_back({{"name", p->name},
                         {"layer", layer.name()},
                         {"role", role_name(p->role)},
                         {"shape", p->value.shape()},
                         {"offset", offset},
                         {"count", p->value.size()}});
      offset += p->value.size();
      if (p->role == ParamRole::aperture) {
        auto list = nlohmann::ordered_json::array();
        for (Scalar s : p->value.values()) list.push_back(format_number(static_cast<double>(s)));
        apertures[p->name] = list;
      }
    }
  }
  header["entries"] = std::move(entries);
  header["apertures"] = std::move(apertures);
  const std::string text = header.dump(1);
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::append_le64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (auto* p : net.state())
    for (Scalar v : p->value.values()) {
      const double d = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof bits);
      detail::append_le64(out, bits);
    }
  return out;
}

/// Restores values into a network of identical structure; names and shapes must match.
template <typename Scalar>
void decode_checkpoint(Sequential<Scalar>& net, std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("checkpoint: bad magic");
  const std::uint64_t header_len = detail::read_le64(bytes, 8);
  if (bytes.size() < 16 + header_len) throw FormatError("checkpoint: truncated header");
  const auto header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len),
                                            nullptr, false);
  if (header.is_discarded() || !header.contains("entries")) throw FormatError("checkpoint: malformed header");
  const auto& entries = header["entries"];
  auto state = net.state();
  if (entries.size() != state.size())
    throw FormatError("checkpoint: " + std::to_string(entries.size()) + " tensors, network has " +
                      std::to_string(state.size()));
  const std::size_t payload = 16 + header_len;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& e = entries[i];
    auto* p = state[i];
    if (e.at("name").get<std::string>() != p->name || e.at("shape").get<Shape>() != p->value.shape())
      throw FormatError("checkpoint: entry " + std::to_string(i) + " (" + e.at("name").get<std::string>() +
                        ") does not match network tensor " + p->name);
    const std::size_t offset = e.at("offset").get<std::size_t>();
    if (bytes.size() < payload + 8 * (offset + p->value.size()))
      throw FormatError("checkpoint: truncated payload at byte offset " + std::to_string(bytes.size()));
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const std::uint64_t bits = detail::read_le64(bytes, payload + 8 * (offset + k));
      double d;
      std::memcpy(&d, &bits, sizeof d);
      p->value[k] = static_cast<Scalar>(d);
    }
  }
}

template <typename Scalar>
void save_checkpoint(Sequential<Scalar>& net, const std::filesystem::path& path) {
  write_file(path.string(), encode_checkpoint(net));
}

template <typename Scalar>
void load_checkpoint(Sequential<Scalar>& net, const std::filesystem::path& path) {
  decode_checkpoint(net, read_file(path.string()));
}

}  // namespace aconv
