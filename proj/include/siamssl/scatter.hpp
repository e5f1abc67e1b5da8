#pragma once

// Two-dimensional embedding scatter output (CSV + SVG) and the mean silhouette
// used to quantify class separation.

#include "siamssl/data.hpp"
#include "siamssl/embedknn.hpp"
#include "siamssl/errors.hpp"
#include "siamssl/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace siamssl {

/// Mean silhouette over all points: s(i) = (b - a) / max(a, b) with a the mean
/// distance to the own cluster and b the smallest mean distance to another cluster.
/// Points alone in their cluster score 0. NaN when fewer than 2 clusters exist.
inline double silhouette(const Matrix<double>& points, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (labels.size() != n) throw ArgumentError("silhouette: points and labels differ in count");
  std::map<int, std::size_t> sizes;
  for (int y : labels) ++sizes[y];
  if (sizes.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  std::map<int, std::size_t> slot;
  for (const auto& [y, c] : sizes) slot.emplace(y, slot.size());
  std::vector<double> sums(sizes.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i)
        sums[slot[labels[j]]] += (points.row(static_cast<Eigen::Index>(i)) - points.row(static_cast<Eigen::Index>(j))).norm();
    const int own = labels[i];
    if (sizes[own] < 2) continue;
    const double a = sums[slot[own]] / static_cast<double>(sizes[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [y, c] : sizes)
      if (y != own) b = std::min(b, sums[slot[y]] / static_cast<double>(c));
    const double denom = std::max(a, b);
    total += denom > 0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

/// Writes a standalone SVG scatter plot, one colour per class.
inline void write_scatter_svg(const Matrix<double>& xy, std::span<const int> labels, const std::string& path) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  constexpr double size = 480.0;
  constexpr double pad = 20.0;
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << ' ' << size << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (xy.rows() > 0) {
    const double x0 = xy.col(0).minCoeff(), x1 = xy.col(0).maxCoeff();
    const double y0 = xy.col(1).minCoeff(), y1 = xy.col(1).maxCoeff();
    const double sx = x1 > x0 ? (size - 2 * pad) / (x1 - x0) : 0.0;
    const double sy = y1 > y0 ? (size - 2 * pad) / (y1 - y0) : 0.0;
    char buf[160];
    for (Eigen::Index i = 0; i < xy.rows(); ++i) {
      const int y = labels[static_cast<std::size_t>(i)];
      const char* colour = y < 0 ? "#000000" : palette[y % 10];
      const double px = sx > 0 ? pad + (xy(i, 0) - x0) * sx : size / 2;
      const double py = sy > 0 ? size - pad - (xy(i, 1) - y0) * sy : size / 2;
      std::snprintf(buf, sizeof buf, "<circle cx=\"%.2f\" cy=\"%.2f\" r=\"2\" fill=\"%s\" fill-opacity=\"0.7\"/>\n", px,
                    py, colour);
      out << buf;
    }
  }
  out << "</svg>\n";
}

struct ScatterResult {
  std::size_t points = 0;
  double silhouette = std::numeric_limits<double>::quiet_NaN();
  std::string csv_path;
  std::string svg_path;
};

/// Embeds every example of `data` with a 2-dimensional model and writes
/// `out_path` (CSV: x,y,label) plus an SVG next to it.
template <typename T>
ScatterResult emit_scatter(const Model<T>& model, const Dataset& data, const std::string& out_path) {
  if (model.embedding_dim != 2)
    throw ArgumentError("emit_scatter: model embeds into " + std::to_string(model.embedding_dim) +
                        " dimensions, scatter needs 2");
  ScatterResult res;
  res.csv_path = out_path;
  res.svg_path = std::filesystem::path(out_path).replace_extension(".svg").string();
  res.points = data.size();
  Matrix<double> xy(0, 2);
  if (data.size() > 0) xy = embed(model, data).rows.template cast<double>();
  std::vector<int> labels(data.size(), kUnlabeled);
  if (data.has_labels()) labels = data.labels;

  std::ofstream out(out_path);
  if (!out) throw FormatError(out_path + ": cannot open for writing");
  out << "x,y,label\n";
  for (Eigen::Index i = 0; i < xy.rows(); ++i)
    out << format_number(xy(i, 0)) << ',' << format_number(xy(i, 1)) << ',' << labels[static_cast<std::size_t>(i)]
        << '\n';
  out.close();
  write_scatter_svg(xy, labels, res.svg_path);
  std::vector<Eigen::Index> known;
  for (Eigen::Index i = 0; i < xy.rows(); ++i)
    if (labels[static_cast<std::size_t>(i)] != kUnlabeled) known.push_back(i);
  if (known.size() > 1) {
    Matrix<double> pts(static_cast<Eigen::Index>(known.size()), 2);
    std::vector<int> kl;
    for (std::size_t r = 0; r < known.size(); ++r) {
      pts.row(static_cast<Eigen::Index>(r)) = xy.row(known[r]);
      kl.push_back(labels[static_cast<std::size_t>(known[r])]);
    }
    res.silhouette = silhouette(pts, kl);
  }
  return res;
}

}  // namespace siamssl
