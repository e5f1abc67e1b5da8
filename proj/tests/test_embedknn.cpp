#include "siamssl/embedknn.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace siamssl {
namespace {

using testing::random_matrix;

std::vector<std::vector<double>> rows_of(const Matrix<double>& m) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[static_cast<std::size_t>(i)].push_back(m(i, j));
  return out;
}

TEST(PairwiseDist, SinglePointToItself) {
  Matrix<double> a(1, 3);
  a << 1, 2, 3;
  const auto d = pairwise_dist(a, a);
  ASSERT_EQ(d.rows(), 1);
  EXPECT_EQ(d(0, 0), 0.0);
}

TEST(PairwiseDist, ThreeFourFive) {
  Matrix<float> a(1, 2), b(1, 2);
  a << 0, 0;
  b << 3, 4;
  EXPECT_EQ(pairwise_dist(a, b)(0, 0), 5.0);
}

TEST(PairwiseDist, MatchesNaiveLoopAndMetricAxioms) {
  std::mt19937_64 rng(1);
  const auto a = random_matrix<double>(9, 4, rng);
  const auto b = random_matrix<double>(7, 4, rng);
  const auto d = pairwise_dist(a, b);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 7; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) s += (a(i, k) - b(j, k)) * (a(i, k) - b(j, k));
      EXPECT_NEAR(d(i, j), std::sqrt(s), 1e-14);
    }
  const auto daa = pairwise_dist(a, a);
  for (int i = 0; i < 9; ++i) {
    EXPECT_EQ(daa(i, i), 0.0);
    for (int j = 0; j < 9; ++j) {
      EXPECT_EQ(daa(i, j), daa(j, i));
      for (int k = 0; k < 9; ++k) EXPECT_LE(daa(i, k), daa(i, j) + daa(j, k) + 1e-12);
    }
  }
}

TEST(PairwiseDist, DimensionMismatch) {
  EXPECT_THROW(pairwise_dist(Matrix<double>(Matrix<double>::Zero(2, 3)), Matrix<double>(Matrix<double>::Zero(2, 4))),
               ArgumentError);
}

TEST(KnnPredict, SingleReferenceLabelsEverything) {
  std::mt19937_64 rng(2);
  const auto q = random_matrix<double>(20, 3, rng);
  Matrix<double> ref(1, 3);
  ref << 0, 0, 0;
  const std::vector<int> labels = {7};
  for (const auto& p : knn_predict(q, ref, labels)) EXPECT_EQ(p.label, 7);
}

TEST(KnnPredict, CoincidentPointHasZeroDistance) {
  Matrix<double> ref(3, 2);
  ref << 0, 0, 1, 1, 2, 2;
  const std::vector<int> labels = {0, 1, 2};
  Matrix<double> q = ref.row(1);
  const auto p = knn_predict(q, ref, labels);
  EXPECT_EQ(p[0].label, 1);
  EXPECT_EQ(p[0].distance, 0.0);
}

TEST(KnnPredict, TiesGoToLowestReferenceIndex) {
  Matrix<double> ref(2, 1);
  ref << -1, 1;
  const std::vector<int> labels = {5, 3};
  Matrix<double> q = Matrix<double>::Zero(1, 1);
  EXPECT_EQ(knn_predict(q, ref, labels)[0].label, 5);
}

TEST(KnnPredict, MatchesBruteForceOnRandomClouds) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ref = random_matrix<double>(6 + trial, 2, rng);
    const auto q = random_matrix<double>(15, 2, rng);
    std::vector<int> labels(static_cast<std::size_t>(ref.rows()));
    for (auto& y : labels) y = static_cast<int>(rng() % 3);
    const auto preds = knn_predict(q, ref, labels);
    const auto refs = rows_of(ref);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      const auto [idx, dist] = testing::brute_nearest(refs, rows_of(q)[static_cast<std::size_t>(i)]);
      EXPECT_EQ(preds[static_cast<std::size_t>(i)].label, labels[idx]);
      EXPECT_NEAR(preds[static_cast<std::size_t>(i)].distance, dist, 1e-14);
    }
  }
}

TEST(KnnPredict, DuplicatedReferencesDoNotChangeOneNn) {
  std::mt19937_64 rng(4);
  const auto ref = random_matrix<double>(10, 3, rng);
  const auto q = random_matrix<double>(30, 3, rng);
  std::vector<int> labels(10);
  for (std::size_t i = 0; i < 10; ++i) labels[i] = static_cast<int>(i % 4);
  Matrix<double> doubled(20, 3);
  doubled << ref, ref;
  std::vector<int> doubled_labels = labels;
  doubled_labels.insert(doubled_labels.end(), labels.begin(), labels.end());
  EXPECT_EQ(knn_predict(q, ref, labels), knn_predict(q, doubled, doubled_labels));
}

TEST(KnnPredict, MajorityVoteForLargerK) {
  Matrix<double> ref(5, 1);
  ref << 0, 1, 2, 10, 11;
  const std::vector<int> labels = {0, 1, 1, 2, 2};
  Matrix<double> q(1, 1);
  q << 0.4;
  const auto p = knn_predict(q, ref, labels, 3);
  EXPECT_EQ(p[0].label, 1);
  EXPECT_NEAR(p[0].distance, (0.4 + 0.6 + 1.6) / 3.0, 1e-14);
  // A 1-1 split between the two nearest goes to the nearer label.
  EXPECT_EQ(knn_predict(q, ref, labels, 2)[0].label, 0);
}

TEST(KnnPredict, ArgumentErrors) {
  const Matrix<double> q = Matrix<double>::Zero(1, 2);
  EXPECT_THROW(knn_predict(q, Matrix<double>(0, 2), std::vector<int>{}), ArgumentError);
  EXPECT_THROW(knn_predict(q, Matrix<double>(Matrix<double>::Zero(2, 2)), std::vector<int>{0}), ArgumentError);
  EXPECT_THROW(knn_predict(q, Matrix<double>(Matrix<double>::Zero(2, 2)), std::vector<int>{0, 1}, 3), ArgumentError);
  EXPECT_THROW(knn_predict(q, Matrix<double>(Matrix<double>::Zero(2, 3)), std::vector<int>{0, 1}), ArgumentError);
}

TEST(Selection, CountRounding) {
  EXPECT_EQ(selection_count(10, 900, 900), 90u);
  EXPECT_EQ(selection_count(10, 905, 905), 91u);
  EXPECT_EQ(selection_count(10, 59900, 59900), 5990u);
  EXPECT_EQ(selection_count(100, 4, 4), 4u);
  EXPECT_EQ(selection_count(10, 1000, 30), 30u);
  EXPECT_EQ(selection_count(0.001, 1, 1), 1u);
  EXPECT_THROW(selection_count(0, 10, 10), ArgumentError);
  EXPECT_THROW(selection_count(101, 10, 10), ArgumentError);
}

TEST(SelectTopByDistance, OrdersByDistanceThenPosition) {
  const std::vector<Prediction> preds = {{0, 0.5}, {1, 0.1}, {2, 0.5}, {0, 0.2}, {1, 0.1}};
  EXPECT_EQ(select_top_by_distance(preds, 60, 5), (std::vector<std::size_t>{1, 4, 3}));
  EXPECT_EQ(select_top_by_distance(preds, 100, 5), (std::vector<std::size_t>{1, 4, 3, 0, 2}));
}

TEST(SelectTopByDistance, InitialBasisCapsAtPool) {
  const std::vector<Prediction> preds = {{0, 0.3}, {1, 0.2}};
  EXPECT_EQ(select_top_by_distance(preds, 10, 900).size(), 2u);
}

TEST(SelectTopByDistance, PrefixPropertyAndDistinct) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Prediction> preds(1 + rng() % 200);
    for (auto& p : preds) p.distance = std::round(u(rng) * 20) / 20;  // plenty of ties
    const auto small = select_top_by_distance(preds, 10, preds.size());
    const auto large = select_top_by_distance(preds, 40, preds.size());
    ASSERT_LE(small.size(), large.size());
    for (std::size_t i = 0; i < small.size(); ++i) EXPECT_EQ(small[i], large[i]);
    std::vector<bool> seen(preds.size());
    for (auto i : large) {
      EXPECT_FALSE(seen[i]);
      seen[i] = true;
    }
    for (std::size_t i = 1; i < large.size(); ++i)
      EXPECT_LE(preds[large[i - 1]].distance, preds[large[i]].distance);
    // Nothing left out is strictly closer than the last one taken.
    if (!large.empty())
      for (std::size_t i = 0; i < preds.size(); ++i)
        if (!seen[i]) EXPECT_GE(preds[i].distance, preds[large.back()].distance);
  }
}

TEST(Embed, ChunkingDoesNotChangeRows) {
  const auto m = init_model<float>(mlp_model_spec(8, 1, 2), {1, 1, 3}, 3);
  const auto ds = make_blobs(50, {{0, 0, 0}, {1, 1, 1}}, 0.5, 3);
  std::vector<std::size_t> idx = {5, 0, 99, 42, 17};
  const auto a = embed(m, ds, std::span<const std::size_t>(idx), 2);
  const auto b = embed(m, ds, std::span<const std::size_t>(idx), 256);
  EXPECT_TRUE(a.rows == b.rows);
  EXPECT_EQ(a.source_idx, idx);
  const auto all = embed(m, ds);
  EXPECT_EQ(all.rows.rows(), 100);
  EXPECT_TRUE(all.rows.row(42) == a.rows.row(3));
}

TEST(Embed, ShapeMismatch) {
  const auto m = init_model<float>(mlp_model_spec(8, 1, 2), {1, 1, 3}, 3);
  const auto ds = make_blobs(5, {{0, 0}, {1, 1}}, 0.5, 3);
  EXPECT_THROW(embed(m, ds), ArgumentError);
}

}  // namespace
}  // namespace siamssl
