#pragma once

#include "siamssl/errors.hpp"
#include "siamssl/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace siamssl {

/// Label value marking an example whose class is unknown.
inline constexpr int kUnlabeled = -1;

/// Examples of a common shape, stored contiguously (row-major, HWC per example),
/// with optional class labels.
struct Dataset {
  Shape shape;
  std::vector<float> features;
  std::vector<int> labels;  // empty when the dataset carries no labels
  int num_classes = 0;

  std::size_t size() const noexcept { return shape.size() == 0 ? 0 : features.size() / shape.size(); }
  bool has_labels() const noexcept { return !labels.empty(); }

  std::span<const float> example(std::size_t i) const {
    return {features.data() + i * shape.size(), shape.size()};
  }

  /// Throws ConsistencyError if the storage or labels break the invariants.
  void validate() const {
    if (shape.size() == 0) throw ConsistencyError("dataset shape has zero size");
    if (features.size() % shape.size() != 0)
      throw ConsistencyError("feature storage is not a whole number of examples");
    if (has_labels()) {
      if (labels.size() != size())
        throw ConsistencyError("dataset has " + std::to_string(size()) + " examples but " +
                               std::to_string(labels.size()) + " labels");
      for (int y : labels) {
        if (y != kUnlabeled && (y < 0 || y >= num_classes))
          throw ConsistencyError("label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(num_classes) + ")");
      }
    }
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.shape = shape;
    out.num_classes = num_classes;
    out.features.reserve(idx.size() * shape.size());
    for (std::size_t i : idx) {
      auto ex = example(i);
      out.features.insert(out.features.end(), ex.begin(), ex.end());
      if (has_labels()) out.labels.push_back(labels[i]);
    }
    return out;
  }

  /// Copies the selected examples into a batch matrix, one example per row.
  template <typename T>
  Matrix<T> gather(std::span<const std::size_t> idx) const {
    Matrix<T> batch(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(shape.size()));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto ex = example(idx[r]);
      for (std::size_t c = 0; c < ex.size(); ++c) batch(r, c) = static_cast<T>(ex[c]);
    }
    return batch;
  }
};

/// Labeled/unlabeled partition of a training set plus the held-out test set.
struct Split {
  std::vector<std::size_t> labeled_idx;
  std::vector<std::size_t> unlabeled_idx;
  Dataset test;
};

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4))
    throw FormatError(path + ": truncated IDX header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

inline std::ifstream open_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  return in;
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image file (and optionally the matching label file). Pixel bytes
/// are scaled by 1/255. `limit` > 0 keeps only the first `limit` examples.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t limit = 0) {
  auto img = detail::open_binary(images_path);
  const std::uint32_t magic = detail::read_be32(img, images_path);
  if (magic != kIdxImagesMagic) {
    std::ostringstream msg;
    msg << images_path << ": bad IDX image magic 0x" << std::hex << magic;
    throw FormatError(msg.str());
  }
  const std::uint32_t count = detail::read_be32(img, images_path);
  const std::uint32_t rows = detail::read_be32(img, images_path);
  const std::uint32_t cols = detail::read_be32(img, images_path);
  if (rows == 0 || cols == 0) throw FormatError(images_path + ": zero image dimension");

  Dataset ds;
  ds.shape = {static_cast<int>(rows), static_cast<int>(cols), 1};
  const std::size_t keep = limit > 0 ? std::min<std::size_t>(limit, count) : count;
  std::vector<unsigned char> bytes(keep * ds.shape.size());
  if (!img.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw FormatError(images_path + ": truncated pixel data");
  ds.features.resize(bytes.size());
  std::transform(bytes.begin(), bytes.end(), ds.features.begin(),
                 [](unsigned char b) { return static_cast<float>(b) / 255.0f; });

  if (!labels_path.empty()) {
    auto lab = detail::open_binary(labels_path);
    const std::uint32_t lmagic = detail::read_be32(lab, labels_path);
    if (lmagic != kIdxLabelsMagic) {
      std::ostringstream msg;
      msg << labels_path << ": bad IDX label magic 0x" << std::hex << lmagic;
      throw FormatError(msg.str());
    }
    const std::uint32_t lcount = detail::read_be32(lab, labels_path);
    if (lcount != count)
      throw ConsistencyError(labels_path + ": " + std::to_string(lcount) + " labels for " +
                             std::to_string(count) + " images");
    std::vector<unsigned char> lbytes(keep);
    if (!lab.read(reinterpret_cast<char*>(lbytes.data()), static_cast<std::streamsize>(keep)))
      throw FormatError(labels_path + ": truncated label data");
    ds.labels.assign(lbytes.begin(), lbytes.end());
    ds.num_classes = ds.labels.empty() ? 0 : *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  }
  return ds;
}

/// Writes an IDX image/label pair. Features are mapped back to bytes by round(255 x).
inline void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  if (ds.shape.channels != 1) throw ArgumentError("IDX export supports single-channel images only");
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw FormatError(images_path + ": cannot open for writing");
  detail::write_be32(img, kIdxImagesMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.shape.height));
  detail::write_be32(img, static_cast<std::uint32_t>(ds.shape.width));
  for (float v : ds.features)
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  if (!labels_path.empty()) {
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw FormatError(labels_path + ": cannot open for writing");
    detail::write_be32(lab, kIdxLabelsMagic);
    detail::write_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
    for (int y : ds.labels) lab.put(static_cast<char>(y));
  }
}

/// Isotropic Gaussian clusters, `n_per_class` points around each center; the label
/// is the center index. Examples are grouped by class.
inline Dataset make_blobs(int n_per_class, const std::vector<std::vector<double>>& centers,
                          double stddev, std::uint64_t seed) {
  if (n_per_class <= 0) throw ArgumentError("make_blobs: n_per_class must be positive");
  if (centers.size() < 2) throw ArgumentError("make_blobs: need at least 2 centers");
  if (!(stddev >= 0.0)) throw ArgumentError("make_blobs: stddev must be non-negative");
  const std::size_t dim = centers.front().size();
  if (dim == 0) throw ArgumentError("make_blobs: centers must have at least one coordinate");
  for (const auto& c : centers)
    if (c.size() != dim) throw ArgumentError("make_blobs: centers differ in dimension");

  Dataset ds;
  ds.shape = {1, 1, static_cast<int>(dim)};
  ds.num_classes = static_cast<int>(centers.size());
  ds.features.reserve(centers.size() * static_cast<std::size_t>(n_per_class) * dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t k = 0; k < centers.size(); ++k) {
    for (int i = 0; i < n_per_class; ++i) {
      for (std::size_t d = 0; d < dim; ++d)
        ds.features.push_back(static_cast<float>(centers[k][d] + stddev * noise(rng)));
      ds.labels.push_back(static_cast<int>(k));
    }
  }
  return ds;
}

/// Draws `n_labeled / c` examples uniformly without replacement from every class;
/// the rest of the training set becomes the unlabeled pool. Both index lists are
/// returned in ascending order.
inline Split split_balanced(const Dataset& train, std::size_t n_labeled, std::uint64_t seed,
                            Dataset test = {}) {
  if (!train.has_labels()) throw ArgumentError("split_balanced: training set has no labels");
  const int c = train.num_classes;
  if (c <= 0) throw ArgumentError("split_balanced: dataset declares no classes");
  if (n_labeled % static_cast<std::size_t>(c) != 0)
    throw ArgumentError("split_balanced: n_labeled=" + std::to_string(n_labeled) +
                        " is not divisible by " + std::to_string(c) + " classes");
  const std::size_t per_class = n_labeled / static_cast<std::size_t>(c);

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(c));
  for (std::size_t i = 0; i < train.size(); ++i)
    if (train.labels[i] >= 0) by_class[static_cast<std::size_t>(train.labels[i])].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<char> chosen(train.size(), 0);
  Split split;
  for (int k = 0; k < c; ++k) {
    auto& members = by_class[static_cast<std::size_t>(k)];
    if (members.size() < per_class)
      throw ArgumentError("split_balanced: class " + std::to_string(k) + " has only " +
                          std::to_string(members.size()) + " examples, need " + std::to_string(per_class));
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t j = 0; j < per_class; ++j) chosen[members[j]] = 1;
  }
  for (std::size_t i = 0; i < train.size(); ++i)
    (chosen[i] ? split.labeled_idx : split.unlabeled_idx).push_back(i);
  split.test = std::move(test);
  return split;
}

/// One row per example: feature columns, then the label (-1 when unknown).
inline void write_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  const std::size_t d = ds.shape.size();
  for (std::size_t j = 0; j < d; ++j) out << 'x' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto ex = ds.example(i);
    for (float v : ex) out << format_number(v) << ',';
    out << (ds.has_labels() ? ds.labels[i] : kUnlabeled) << '\n';
  }
}

/// Reads the CSV layout produced by write_csv. Rows with label -1 stay unlabeled.
inline Dataset read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path + ": empty file");
  const auto columns = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (columns < 2) throw FormatError(path + ": need at least one feature column and a label column");

  Dataset ds;
  ds.shape = {1, 1, static_cast<int>(columns - 1)};
  bool any_label = false;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::size_t col = 0;
    while (std::getline(row, cell, ',')) {
      try {
        if (col + 1 < columns) {
          ds.features.push_back(std::stof(cell));
        } else if (col + 1 == columns) {
          const int y = std::stoi(cell);
          if (y < kUnlabeled) throw FormatError("bad label");
          any_label = any_label || y >= 0;
          ds.labels.push_back(y);
        }
      } catch (const std::exception&) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": cannot parse '" + cell + "'");
      }
      ++col;
    }
    if (col != columns)
      throw FormatError(path + ":" + std::to_string(line_no) + ": expected " + std::to_string(columns) +
                        " columns, found " + std::to_string(col));
  }
  if (any_label) {
    ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  } else {
    ds.labels.clear();
  }
  return ds;
}

}  // namespace siamssl
