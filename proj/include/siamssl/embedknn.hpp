#pragma once

#include "siamssl/data.hpp"
#include "siamssl/errors.hpp"
#include "siamssl/net.hpp"
#include "siamssl/selection.hpp"
#include "siamssl/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

namespace siamssl {

/// Embeddings of selected dataset examples; row r belongs to dataset index source_idx[r].
template <typename T>
struct EmbeddingMatrix {
  Matrix<T> rows;
  std::vector<std::size_t> source_idx;
};

/// Runs the model over `indices` in chunks of `chunk` examples.
template <typename T>
EmbeddingMatrix<T> embed(const Model<T>& model, const Dataset& data, std::span<const std::size_t> indices,
                         std::size_t chunk = 256) {
  if (data.shape != model.input_shape)
    throw ArgumentError("embed: dataset shape " + data.shape.str() + " does not match model input " +
                        model.input_shape.str());
  EmbeddingMatrix<T> out;
  out.source_idx.assign(indices.begin(), indices.end());
  out.rows.resize(static_cast<Eigen::Index>(indices.size()), model.embedding_dim);
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t len = std::min(chunk, indices.size() - start);
    const Matrix<T> batch = data.gather<T>(indices.subspan(start, len));
    out.rows.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)) = forward(model, batch);
  }
  return out;
}

/// Embeds the whole dataset.
template <typename T>
EmbeddingMatrix<T> embed(const Model<T>& model, const Dataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return embed(model, data, std::span<const std::size_t>(all));
}

namespace detail {

template <typename T>
double euclidean(const Matrix<T>& A, Eigen::Index i, const Matrix<T>& B, Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < A.cols(); ++c) {
    const double d = static_cast<double>(A(i, c)) - static_cast<double>(B(j, c));
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace detail

/// |A| x |B| matrix of Euclidean distances, accumulated in double precision.
template <typename T>
Matrix<double> pairwise_dist(const Matrix<T>& A, const Matrix<T>& B) {
  if (A.cols() != B.cols())
    throw ArgumentError("pairwise_dist: dimension mismatch " + std::to_string(A.cols()) + " vs " +
                        std::to_string(B.cols()));
  Matrix<double> D(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j) D(i, j) = detail::euclidean(A, i, B, j);
  return D;
}

struct Prediction {
  int label = 0;
  double distance = 0.0;
  bool operator==(const Prediction&) const = default;
};

/// k-nearest-neighbour labels for every row of `query`. Neighbours are ranked by
/// (distance, labeled index). For k > 1 the majority label wins, ties going to the
/// label seen first in rank order, and distance is the mean of the k distances.
template <typename T>
std::vector<Prediction> knn_predict(const Matrix<T>& query, const Matrix<T>& reference,
                                    std::span<const int> reference_labels, int k = 1) {
  if (reference.rows() == 0) throw ArgumentError("knn_predict: empty labeled set");
  if (static_cast<std::size_t>(reference.rows()) != reference_labels.size())
    throw ArgumentError("knn_predict: reference rows and labels differ in count");
  if (k < 1 || k > reference.rows()) throw ArgumentError("knn_predict: k must lie in [1, |labeled|]");
  if (query.rows() > 0 && query.cols() != reference.cols())
    throw ArgumentError("knn_predict: embedding dimension mismatch");

  std::vector<Prediction> out(static_cast<std::size_t>(query.rows()));
  std::vector<std::pair<double, Eigen::Index>> ranked(static_cast<std::size_t>(reference.rows()));
  for (Eigen::Index q = 0; q < query.rows(); ++q) {
    if (k == 1) {
      double best = detail::euclidean(query, q, reference, 0);
      Eigen::Index arg = 0;
      for (Eigen::Index j = 1; j < reference.rows(); ++j) {
        const double d = detail::euclidean(query, q, reference, j);
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      out[static_cast<std::size_t>(q)] = {reference_labels[static_cast<std::size_t>(arg)], best};
      continue;
    }
    for (Eigen::Index j = 0; j < reference.rows(); ++j)
      ranked[static_cast<std::size_t>(j)] = {detail::euclidean(query, q, reference, j), j};
    std::partial_sort(ranked.begin(), ranked.begin() + k, ranked.end());
    std::vector<std::pair<int, int>> votes;  // (label, count) in first-seen order
    double dist_sum = 0.0;
    for (int r = 0; r < k; ++r) {
      const int y = reference_labels[static_cast<std::size_t>(ranked[static_cast<std::size_t>(r)].second)];
      dist_sum += ranked[static_cast<std::size_t>(r)].first;
      auto it = std::find_if(votes.begin(), votes.end(), [y](const auto& v) { return v.first == y; });
      if (it == votes.end()) {
        votes.emplace_back(y, 1);
      } else {
        ++it->second;
      }
    }
    auto winner = votes.begin();
    for (auto it = votes.begin(); it != votes.end(); ++it)
      if (it->second > winner->second) winner = it;
    out[static_cast<std::size_t>(q)] = {winner->first, dist_sum / k};
  }
  return out;
}

/// Positions of the selection_count(...) smallest-distance predictions, ordered by
/// (distance, position).
inline std::vector<std::size_t> select_top_by_distance(std::span<const Prediction> predictions, double p_percent,
                                                       std::size_t pool_size_basis) {
  const std::size_t n = selection_count(p_percent, pool_size_basis, predictions.size());
  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return predictions[a].distance < predictions[b].distance; });
  order.resize(n);
  return order;
}

}  // namespace siamssl
