#include "aconv/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "aconv/errors.hpp"

namespace aconv {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* what) {
  if (bytes.size() < offset + 4)
    throw FormatError(std::string("IDX ") + what + ": truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void check_payload(std::span<const std::uint8_t> bytes, std::size_t header, std::size_t payload, const char* what) {
  if (bytes.size() < header + payload)
    throw FormatError(std::string("IDX ") + what + ": truncated payload, expected " + std::to_string(payload) +
                      " bytes from offset " + std::to_string(header) + ", file ends at byte offset " +
                      std::to_string(bytes.size()));
}

}  // namespace

void DatasetBundle::validate() const {
  if (class_count <= 0) throw ArgumentError("dataset " + name + " has no classes");
  auto check = [&](const Tensord& x, const std::vector<int>& y, const char* split) {
    if (x.rank() != 4 || x.dim(0) != y.size())
      throw ArgumentError(std::string("dataset split ") + split + " images/labels mismatch");
    for (int label : y)
      if (label < 0 || label >= class_count)
        throw ArgumentError(std::string("label out of range in split ") + split);
    for (double v : x.values())
      if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError(std::string("pixel outside [0,1] in split ") + split);
  };
  check(train_x, train_y, "train");
  check(test_x, test_y, "test");
}

Tensord parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw FormatError("IDX images: empty file");
  const auto magic = read_be32(bytes, 0, "images");
  if (magic != kImageMagic) {
    std::ostringstream os;
    os << "IDX images: bad magic 0x" << std::hex << magic << " at byte offset 0";
    throw FormatError(os.str());
  }
  const std::size_t count = read_be32(bytes, 4, "images");
  const std::size_t rows = read_be32(bytes, 8, "images");
  const std::size_t cols = read_be32(bytes, 12, "images");
  if (count == 0 || rows == 0 || cols == 0) throw FormatError("IDX images: zero-sized dimension");
  const std::size_t header = 16;
  check_payload(bytes, header, count * rows * cols, "images");
  Tensord images({count, rows, cols, 1});
  for (std::size_t i = 0; i < images.size(); ++i) images[i] = bytes[header + i] / 255.0;
  return images;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw FormatError("IDX labels: empty file");
  const auto magic = read_be32(bytes, 0, "labels");
  if (magic != kLabelMagic) {
    std::ostringstream os;
    os << "IDX labels: bad magic 0x" << std::hex << magic << " at byte offset 0";
    throw FormatError(os.str());
  }
  const std::size_t count = read_be32(bytes, 4, "labels");
  const std::size_t header = 8;
  check_payload(bytes, header, count, "labels");
  return {bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + count)};
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

LabeledImages load_idx(const std::string& images_path, const std::string& labels_path) {
  LabeledImages out;
  out.images = parse_idx_images(read_file(images_path));
  out.labels = parse_idx_labels(read_file(labels_path));
  if (out.images.dim(0) != out.labels.size())
    throw FormatError("IDX count mismatch: " + std::to_string(out.images.dim(0)) + " images vs " +
                      std::to_string(out.labels.size()) + " labels");
  return out;
}

namespace {

LabeledImages truncate(LabeledImages set, std::size_t limit) {
  if (limit == 0 || limit >= set.labels.size()) return set;
  Shape shape = set.images.shape();
  const std::size_t per = set.images.size() / shape[0];
  shape[0] = limit;
  std::vector<double> head(set.images.data(), set.images.data() + limit * per);
  set.images = Tensord(shape, std::move(head));
  set.labels.resize(limit);
  return set;
}

}  // namespace

DatasetBundle load_idx_dataset(const std::string& train_images, const std::string& train_labels,
                               const std::string& test_images, const std::string& test_labels,
                               std::size_t max_train, std::size_t max_test, const std::string& name) {
  auto train = truncate(load_idx(train_images, train_labels), max_train);
  auto test = truncate(load_idx(test_images, test_labels), max_test);
  if (train.images.dim(1) != test.images.dim(1) || train.images.dim(2) != test.images.dim(2))
    throw FormatError("IDX train and test images differ in size");
  DatasetBundle bundle;
  bundle.name = name;
  int top = 0;
  for (int v : train.labels) top = std::max(top, v);
  for (int v : test.labels) top = std::max(top, v);
  bundle.class_count = top + 1;
  bundle.train_x = std::move(train.images);
  bundle.train_y = std::move(train.labels);
  bundle.test_x = std::move(test.images);
  bundle.test_y = std::move(test.labels);
  bundle.validate();
  return bundle;
}

std::vector<std::uint8_t> encode_idx_images(const Tensord& images) {
  if (images.rank() != 4 || images.dim(3) != 1) throw DimensionError("IDX images must be [N,H,W,1]");
  std::vector<std::uint8_t> out;
  put_be32(out, kImageMagic);
  put_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(1)));
  put_be32(out, static_cast<std::uint32_t>(images.dim(2)));
  for (double v : images.values())
    out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int v : labels) out.push_back(static_cast<std::uint8_t>(v));
  return out;
}

SynthKind parse_synth_kind(const std::string& text) {
  if (text == "blobs") return SynthKind::blobs;
  if (text == "bars") return SynthKind::bars;
  throw ArgumentError("unknown synthetic dataset kind '" + text + "' (expected blobs or bars)");
}

namespace {

void render_blob(double* img, std::size_t size, int cls, int classes, double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double angle = 2.0 * std::numbers::pi * cls / classes;
  const double radius = 0.3 * static_cast<double>(size);
  const double cx = 0.5 * (size - 1) + radius * std::cos(angle) + noise * 4.0 * gauss(rng);
  const double cy = 0.5 * (size - 1) + radius * std::sin(angle) + noise * 4.0 * gauss(rng);
  const double spread = 0.1 * static_cast<double>(size);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const double d2 = (i - cx) * (i - cx) + (j - cy) * (j - cy);
      const double v = std::exp(-d2 / (2 * spread * spread)) + noise * gauss(rng);
      img[i * size + j] = std::clamp(v, 0.0, 1.0);
    }
}

void render_bars(double* img, std::size_t size, int cls, double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::bernoulli_distribution vertical(0.5);
  const std::size_t width = cls == 0 ? 1 : 3;
  const std::size_t period = cls == 0 ? 4 : 8;
  std::uniform_int_distribution<std::size_t> phase(0, period - 1);
  const bool vert = vertical(rng);
  const std::size_t offset = phase(rng);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j) {
      const std::size_t t = (vert ? j : i) + offset;
      const double v = (t % period) < width ? 0.9 : 0.1;
      img[i * size + j] = std::clamp(v + noise * gauss(rng), 0.0, 1.0);
    }
}

}  // namespace

DatasetBundle synth_dataset(SynthKind kind, std::size_t n_per_class, std::uint64_t seed,
                            const SynthOptions& options) {
  if (n_per_class == 0) throw ArgumentError("synth_dataset needs at least one image per class");
  const std::size_t size = options.image_size;
  if (size < 4) throw ArgumentError("synthetic images must be at least 4x4");
  const int classes = kind == SynthKind::blobs ? options.blob_classes : 2;
  if (classes < 2) throw ArgumentError("synthetic dataset needs at least two classes");
  const std::size_t test_per_class =
      options.test_per_class ? options.test_per_class : std::max<std::size_t>(1, n_per_class / 2);

  std::mt19937_64 rng(seed);
  auto make_split = [&](std::size_t per_class, Tensord& x, std::vector<int>& y) {
    const std::size_t total = per_class * static_cast<std::size_t>(classes);
    x = Tensord({total, size, size, 1});
    y.resize(total);
    for (std::size_t i = 0; i < total; ++i) {
      const int cls = static_cast<int>(i % static_cast<std::size_t>(classes));
      y[i] = cls;
      double* img = x.data() + i * size * size;
      if (kind == SynthKind::blobs)
        render_blob(img, size, cls, classes, options.noise, rng);
      else
        render_bars(img, size, cls, options.noise, rng);
    }
  };

  DatasetBundle bundle;
  bundle.name = kind == SynthKind::blobs ? "synth-blobs" : "synth-bars";
  bundle.class_count = classes;
  make_split(n_per_class, bundle.train_x, bundle.train_y);
  make_split(test_per_class, bundle.test_x, bundle.test_y);
  return bundle;
}

Tensord make_test_image(std::size_t size, std::uint64_t seed) {
  if (size < 8) throw ArgumentError("test image must be at least 8x8");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = static_cast<double>(size);
  Tensord img({size, size, 1});
  // smooth ramp plus a grating
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j < size; ++j)
      img(i, j, 0) = 0.3 * (i + j) / (2 * s) + 0.1 * std::sin(2 * std::numbers::pi * j / 9.0);
  // discs and rectangles of random intensity
  for (int shape = 0; shape < 12; ++shape) {
    const double ci = unit(rng) * s, cj = unit(rng) * s;
    const double extent = (0.05 + 0.15 * unit(rng)) * s;
    const double level = unit(rng) - 0.5;
    const bool disc = shape % 2 == 0;
    for (std::size_t i = 0; i < size; ++i)
      for (std::size_t j = 0; j < size; ++j) {
        const double di = i - ci, dj = j - cj;
        const bool inside = disc ? di * di + dj * dj < extent * extent
                                 : std::abs(di) < extent && std::abs(dj) < 0.6 * extent;
        if (inside) img(i, j, 0) += level;
      }
  }
  // fine texture keeps every spatial frequency excited
  for (auto& v : img.values()) v += 3.0 * (unit(rng) - 0.5);
  const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
  const double low = *lo, span = *hi - *lo;
  for (auto& v : img.values()) v = (v - low) / span;
  return img;
}

Tensord load_pgm(const std::string& path) {
  const auto bytes = read_file(path);
  std::string text(bytes.begin(), bytes.end());
  std::istringstream in(text);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw FormatError(path + ": not a PGM (P2/P5) file");
  auto next_int = [&]() {
    std::string token;
    while (in >> token) {
      if (token[0] == '#') {
        std::getline(in, token);
        continue;
      }
      return std::stoi(token);
    }
    throw FormatError(path + ": truncated PGM header");
  };
  const int width = next_int(), height = next_int(), maxval = next_int();
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) throw FormatError(path + ": unsupported PGM");
  Tensord img({static_cast<std::size_t>(height), static_cast<std::size_t>(width), 1});
  if (magic == "P5") {
    const std::size_t start = static_cast<std::size_t>(in.tellg()) + 1;
    if (bytes.size() < start + img.size()) throw FormatError(path + ": truncated PGM payload");
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = bytes[start + i] / static_cast<double>(maxval);
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = next_int() / static_cast<double>(maxval);
  }
  return img;
}

void save_pgm(const std::string& path, const Tensord& image) {
  if (image.rank() != 3 || image.dim(2) != 1) throw DimensionError("save_pgm expects [H,W,1]");
  std::ostringstream header;
  header << "P5\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> out(h.begin(), h.end());
  for (double v : image.values()) out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255)));
  write_file(path, out);
}

}  // namespace aconv
