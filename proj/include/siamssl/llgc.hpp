#pragma once

// Local learning with global consistency over an embedding graph:
//   W_ij = exp(-sigma * |f(x_i) - f(x_j)|^2), W_ii = 0
//   S    = D^{-1/2} W D^{-1/2},  D_i = sum_j W_ij
//   F(t+1) = alpha S F(t) + (1 - alpha) Y,  F(0) = Y
// Unlabeled rows of Y are seeded from nearest-neighbour predictions instead of zeros.

#include "siamssl/errors.hpp"
#include "siamssl/selection.hpp"
#include "siamssl/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace siamssl {

struct LlgcConfig {
  double alpha = 0.99;
  double sigma = 1.0;
  double tolerance = 1e-6;
  int max_iterations = 1000;

  void validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw ArgumentError("llgc: alpha must lie in [0, 1)");
    if (!(sigma > 0.0)) throw ArgumentError("llgc: sigma must be positive");
    if (!(tolerance > 0.0)) throw ArgumentError("llgc: tolerance must be positive");
    if (max_iterations < 1) throw ArgumentError("llgc: max_iterations must be positive");
  }
};

/// One-hot label rows; the first `labeled_count` rows carry ground truth.
struct LabelMatrix {
  Matrix<double> Y;
  std::size_t labeled_count = 0;
};

struct PropagationResult {
  Matrix<double> F;
  std::vector<int> labels;     // argmax per row, ties to the lowest class
  std::vector<double> scores;  // row maximum of F
  int iterations_used = 0;
  bool converged = false;
};

template <typename T>
Matrix<double> affinity(const Matrix<T>& embeddings, double sigma) {
  const Eigen::Index n = embeddings.rows();
  if (n < 2) throw ArgumentError("affinity: need at least 2 points");
  if (!embeddings.allFinite()) throw NumericError("affinity: non-finite embedding");
  const Matrix<double> e = embeddings.template cast<double>();
  Matrix<double> W = Matrix<double>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double w = std::exp(-sigma * (e.row(i) - e.row(j)).squaredNorm());
      W(i, j) = w;
      W(j, i) = w;
    }
  return W;
}

/// S = D^{-1/2} W D^{-1/2}. A vertex with zero degree raises DegeneracyError.
inline Matrix<double> normalize_affinity(const Matrix<double>& W) {
  if (W.rows() != W.cols()) throw ArgumentError("normalize_affinity: W must be square");
  const Vector<double> degree = W.rowwise().sum();
  for (Eigen::Index i = 0; i < degree.size(); ++i)
    if (!(degree(i) > 0.0))
      throw DegeneracyError("normalize_affinity: vertex " + std::to_string(i) +
                                " is isolated (zero affinity to every other point)",
                            static_cast<long>(i));
  const Vector<double> inv_sqrt = degree.array().rsqrt();
  return inv_sqrt.asDiagonal() * W * inv_sqrt.asDiagonal();
}

/// Stacks one-hot rows for the ground-truth labels, then for the k-NN predictions.
inline LabelMatrix seed_label_matrix(std::span<const int> labeled, std::span<const int> predicted, int num_classes) {
  if (num_classes < 1) throw ArgumentError("seed_label_matrix: num_classes must be positive");
  LabelMatrix lm;
  lm.labeled_count = labeled.size();
  lm.Y = Matrix<double>::Zero(static_cast<Eigen::Index>(labeled.size() + predicted.size()), num_classes);
  Eigen::Index row = 0;
  for (auto part : {labeled, predicted}) {
    for (int y : part) {
      if (y < 0 || y >= num_classes)
        throw ArgumentError("seed_label_matrix: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(num_classes) + ")");
      lm.Y(row++, y) = 1.0;
    }
  }
  return lm;
}

namespace detail {

inline void fill_hardened(PropagationResult& r) {
  const auto n = static_cast<std::size_t>(r.F.rows());
  r.labels.resize(n);
  r.scores.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < r.F.cols(); ++j)
      if (r.F(static_cast<Eigen::Index>(i), j) > r.F(static_cast<Eigen::Index>(i), best)) best = j;
    r.labels[i] = static_cast<int>(best);
    r.scores[i] = r.F(static_cast<Eigen::Index>(i), best);
  }
}

}  // namespace detail

/// Observer invoked with (t, F(t)) for every iterate, starting at t = 0.
using PropagationObserver = std::function<void(int, const Matrix<double>&)>;

/// Iterates until max |F(t+1) - F(t)| < tolerance or max_iterations updates have run.
inline PropagationResult propagate(const Matrix<double>& S, const Matrix<double>& Y, const LlgcConfig& config,
                                   const PropagationObserver& observer = {}) {
  config.validate();
  if (S.rows() != S.cols() || S.rows() != Y.rows()) throw ArgumentError("propagate: S and Y shapes disagree");
  PropagationResult r;
  const Matrix<double> base = (1.0 - config.alpha) * Y;
  Matrix<double> F = Y;
  Matrix<double> next(F.rows(), F.cols());
  if (observer) observer(0, F);
  for (int t = 1; t <= config.max_iterations; ++t) {
    next.noalias() = config.alpha * (S * F);
    next += base;
    const double change = F.size() == 0 ? 0.0 : (next - F).cwiseAbs().maxCoeff();
    F.swap(next);
    r.iterations_used = t;
    if (observer) observer(t, F);
    if (change < config.tolerance) {
      r.converged = true;
      break;
    }
  }
  r.F = std::move(F);
  detail::fill_hardened(r);
  return r;
}

/// Fixed point of the propagation: solves (I - alpha S) F = (1 - alpha) Y directly.
inline Matrix<double> closed_form(const Matrix<double>& S, const Matrix<double>& Y, double alpha) {
  if (!(alpha >= 0.0 && alpha < 1.0)) throw NumericError("closed_form: alpha must lie in [0, 1)");
  if (S.rows() != S.cols() || S.rows() != Y.rows()) throw ArgumentError("closed_form: S and Y shapes disagree");
  const Matrix<double> A = Matrix<double>::Identity(S.rows(), S.cols()) - alpha * S;
  Eigen::PartialPivLU<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>> lu(A);
  if (!(lu.rcond() > 1e-14)) throw NumericError("closed_form: system is singular");
  Matrix<double> F = lu.solve(((1.0 - alpha) * Y).eval());
  if (!F.allFinite()) throw NumericError("closed_form: non-finite solution");
  return F;
}

struct Hardened {
  std::vector<int> labels;
  std::vector<double> scores;
};

/// Argmax label and row-maximum score for the rows at or after `labeled_count`.
inline Hardened harden(const Matrix<double>& F, std::size_t labeled_count) {
  PropagationResult tmp;
  tmp.F = F;
  detail::fill_hardened(tmp);
  Hardened h;
  if (labeled_count < tmp.labels.size()) {
    h.labels.assign(tmp.labels.begin() + static_cast<std::ptrdiff_t>(labeled_count), tmp.labels.end());
    h.scores.assign(tmp.scores.begin() + static_cast<std::ptrdiff_t>(labeled_count), tmp.scores.end());
  }
  return h;
}

/// Positions of the selection_count(...) highest scores, ordered by descending
/// score and then by position.
inline std::vector<std::size_t> select_top_by_score(std::span<const double> scores, double p_percent,
                                                    std::size_t pool_size_basis) {
  const std::size_t n = selection_count(p_percent, pool_size_basis, scores.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(n);
  return order;
}

/// Writes F with its hardened label and score, one row per graph vertex.
inline void write_propagation_csv(const PropagationResult& r, std::size_t labeled_count, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << "row,labeled";
  for (Eigen::Index j = 0; j < r.F.cols(); ++j) out << ",f" << j;
  out << ",label,score\n";
  for (Eigen::Index i = 0; i < r.F.rows(); ++i) {
    out << i << ',' << (static_cast<std::size_t>(i) < labeled_count ? 1 : 0);
    for (Eigen::Index j = 0; j < r.F.cols(); ++j) out << ',' << format_number(r.F(i, j));
    out << ',' << r.labels[static_cast<std::size_t>(i)] << ',' << format_number(r.scores[static_cast<std::size_t>(i)])
        << '\n';
  }
}

}  // namespace siamssl
