#pragma once

// Batch-all triplet mining and the triplet margin loss
//   L(a, p, n) = max(d(a, p) - d(a, n) + m, 0)
// with plain Euclidean d, its gradient w.r.t. the embeddings, and the
// easy / semi-hard / hard negative classification.

#include "siamssl/errors.hpp"
#include "siamssl/log.hpp"
#include "siamssl/types.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace siamssl {

/// Anchor, positive and negative positions inside one mini-batch.
struct Triplet {
  std::int32_t a = 0;
  std::int32_t p = 0;
  std::int32_t n = 0;
  bool operator==(const Triplet&) const = default;
};

struct TripletLossConfig {
  double margin = 0.3;
};

enum class Hardness { easy, semi_hard, hard };

inline const char* to_string(Hardness h) {
  switch (h) {
    case Hardness::easy: return "easy";
    case Hardness::semi_hard: return "semi_hard";
    case Hardness::hard: return "hard";
  }
  return "?";
}

/// Every (i, j, k) with labels[i] == labels[j], i != j, labels[i] != labels[k],
/// in lexicographic order.
inline std::vector<Triplet> mine_all_valid(std::span<const int> labels) {
  std::vector<Triplet> out;
  const auto B = static_cast<std::int32_t>(labels.size());
  for (std::int32_t i = 0; i < B; ++i)
    for (std::int32_t j = 0; j < B; ++j) {
      if (j == i || labels[j] != labels[i]) continue;
      for (std::int32_t k = 0; k < B; ++k)
        if (labels[k] != labels[i]) out.push_back({i, j, k});
    }
  return out;
}

/// Closed-form size of mine_all_valid: sum over classes of c_k (c_k - 1) (B - c_k).
inline std::size_t count_valid_triplets(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int y : labels) ++counts[y];
  const std::size_t B = labels.size();
  std::size_t total = 0;
  for (const auto& [label, c] : counts) total += c * (c - 1) * (B - c);
  return total;
}

template <typename T>
struct TripletLossResult {
  double mean = 0.0;
  std::vector<T> per_triplet;
};

namespace detail {

template <typename T>
void check_triplets(const Matrix<T>& emb, std::span<const Triplet> triplets) {
  const auto rows = emb.rows();
  for (const auto& t : triplets) {
    if (t.a < 0 || t.p < 0 || t.n < 0 || t.a >= rows || t.p >= rows || t.n >= rows)
      throw ArgumentError("triplet (" + std::to_string(t.a) + "," + std::to_string(t.p) + "," +
                          std::to_string(t.n) + ") out of range for batch of " + std::to_string(rows));
  }
}

template <typename T>
T row_distance(const Matrix<T>& emb, Eigen::Index i, Eigen::Index j) {
  return (emb.row(i) - emb.row(j)).norm();
}

}  // namespace detail

/// Per-triplet hinge values and their mean. The mean over zero triplets is 0.
template <typename T>
TripletLossResult<T> triplet_loss(const Matrix<T>& emb, std::span<const Triplet> triplets,
                                  const TripletLossConfig& config) {
  detail::check_triplets(emb, triplets);
  TripletLossResult<T> res;
  if (triplets.empty()) {
    log::warn("triplet_loss: no valid triplets in batch, loss defined as 0");
    return res;
  }
  const T m = static_cast<T>(config.margin);
  res.per_triplet.reserve(triplets.size());
  double sum = 0.0;
  for (const auto& t : triplets) {
    const T v = std::max(detail::row_distance(emb, t.a, t.p) - detail::row_distance(emb, t.a, t.n) + m, T(0));
    res.per_triplet.push_back(v);
    sum += static_cast<double>(v);
  }
  res.mean = sum / static_cast<double>(triplets.size());
  return res;
}

/// Gradient of the mean triplet loss w.r.t. every embedding row. Inactive triplets
/// (loss exactly 0) contribute nothing, and a distance of 0 contributes no gradient.
template <typename T>
Matrix<T> triplet_grad(const Matrix<T>& emb, std::span<const Triplet> triplets, const TripletLossConfig& config) {
  detail::check_triplets(emb, triplets);
  Matrix<T> grad = Matrix<T>::Zero(emb.rows(), emb.cols());
  if (triplets.empty()) return grad;
  const T m = static_cast<T>(config.margin);
  // coeff(i, j) collects w / d(i, j) for every active distance term w * d(i, j);
  // then grad_i = sum_j coeff(i, j) (e_i - e_j).
  Matrix<double> coeff = Matrix<double>::Zero(emb.rows(), emb.rows());
  for (const auto& t : triplets) {
    const T dap = detail::row_distance(emb, t.a, t.p);
    const T dan = detail::row_distance(emb, t.a, t.n);
    if (!(dap - dan + m > T(0))) continue;
    if (dap > T(0)) {
      const double w = 1.0 / static_cast<double>(dap);
      coeff(t.a, t.p) += w;
      coeff(t.p, t.a) += w;
    }
    if (dan > T(0)) {
      const double w = 1.0 / static_cast<double>(dan);
      coeff(t.a, t.n) -= w;
      coeff(t.n, t.a) -= w;
    }
  }
  coeff /= static_cast<double>(triplets.size());
  const Matrix<double> e = emb.template cast<double>();
  const Matrix<double> g = coeff.rowwise().sum().asDiagonal() * e - coeff * e;
  return g.template cast<T>();
}

/// Hard: negative closer than the positive. Semi-hard: inside the margin band.
/// Easy: at or beyond d(a, p) + m (zero loss).
template <typename T>
Hardness classify_hardness(const Matrix<T>& emb, const Triplet& t, const TripletLossConfig& config) {
  const T dap = detail::row_distance(emb, t.a, t.p);
  const T dan = detail::row_distance(emb, t.a, t.n);
  if (dan < dap) return Hardness::hard;
  if (dan < dap + static_cast<T>(config.margin)) return Hardness::semi_hard;
  return Hardness::easy;
}

}  // namespace siamssl
