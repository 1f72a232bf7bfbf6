#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aconv/tensor.hpp"

namespace aconv {

/// Train/test split of single-channel images, pixels in [0,1], labels in [0, class_count).
struct DatasetBundle {
  std::string name;
  Tensord train_x;  // [N, H, W, 1]
  std::vector<int> train_y;
  Tensord test_x;
  std::vector<int> test_y;
  int class_count = 0;

  std::size_t height() const { return train_x.dim(1); }
  std::size_t width() const { return train_x.dim(2); }
  std::size_t channels() const { return train_x.dim(3); }

  /// Throws ArgumentError if labels or pixel ranges break the bundle invariants.
  void validate() const;
};

struct LabeledImages {
  Tensord images;  // [N, H, W, 1], scaled by 1/255
  std::vector<int> labels;
};

/// IDX decoding. Magics 0x00000803 (ubyte images) and 0x00000801 (ubyte labels).
Tensord parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path);

/// Loads both splits; `max_train`/`max_test` of 0 keep every record.
DatasetBundle load_idx_dataset(const std::string& train_images, const std::string& train_labels,
                               const std::string& test_images, const std::string& test_labels,
                               std::size_t max_train = 0, std::size_t max_test = 0,
                               const std::string& name = "idx");

std::vector<std::uint8_t> encode_idx_images(const Tensord& images);
std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

enum class SynthKind { blobs, bars };

struct SynthOptions {
  std::size_t image_size = 16;
  double noise = 0.05;
  int blob_classes = 4;
  /// Test images per class; 0 means half of n_per_class (at least one).
  std::size_t test_per_class = 0;
};

/// Deterministic synthetic images. `blobs`: one Gaussian spot per class at a
/// class-specific location. `bars`: class 0 thin stripes, class 1 thick stripes.
DatasetBundle synth_dataset(SynthKind kind, std::size_t n_per_class, std::uint64_t seed,
                            const SynthOptions& options = {});

SynthKind parse_synth_kind(const std::string& text);

/// Grayscale image helpers for the filter-learning experiment.
Tensord make_test_image(std::size_t size, std::uint64_t seed);
Tensord load_pgm(const std::string& path);
void save_pgm(const std::string& path, const Tensord& image);

}  // namespace aconv
