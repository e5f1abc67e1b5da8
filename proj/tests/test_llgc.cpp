#include "siamssl/llgc.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

namespace siamssl {
namespace {

using testing::random_matrix;

struct Problem {
  Matrix<double> S;
  Matrix<double> Y;
};

Problem random_problem(std::mt19937_64& rng, int n, int c, double sigma) {
  const auto e = random_matrix<double>(n, 3, rng);
  std::vector<int> labeled, predicted;
  for (int i = 0; i < n; ++i) (i < n / 4 ? labeled : predicted).push_back(static_cast<int>(rng() % c));
  return {normalize_affinity(affinity(e, sigma)), seed_label_matrix(labeled, predicted, c).Y};
}

TEST(Affinity, TwoIdenticalPoints) {
  const Matrix<double> e = Matrix<double>::Zero(2, 3);
  const auto W = affinity(e, 1.0);
  EXPECT_EQ(W(0, 0), 0.0);
  EXPECT_EQ(W(0, 1), 1.0);
  EXPECT_EQ(W(1, 0), 1.0);
  EXPECT_EQ(W(1, 1), 0.0);
}

TEST(Affinity, KnownDistance) {
  Matrix<double> e(2, 2);
  e << 0, 0, 0.6, 1.2;  // squared distance 1.8
  EXPECT_NEAR(affinity(e, 1.0)(0, 1), std::exp(-1.8), 1e-15);
  EXPECT_NEAR(affinity(e, 1.0)(0, 1), 0.16530, 1e-5);
  EXPECT_NEAR(affinity(e, 2.0)(0, 1), std::exp(-3.6), 1e-15);
}

TEST(Affinity, MatchesScalarLoopAndIsSymmetric) {
  std::mt19937_64 rng(1);
  const auto e = random_matrix<float>(12, 4, rng);
  const auto W = affinity(e, 0.7);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 12; ++j) {
      double s = 0;
      for (int k = 0; k < 4; ++k) {
        const double d = static_cast<double>(e(i, k)) - static_cast<double>(e(j, k));
        s += d * d;
      }
      EXPECT_NEAR(W(i, j), i == j ? 0.0 : std::exp(-0.7 * s), 1e-14);
      EXPECT_EQ(W(i, j), W(j, i));
      EXPECT_GE(W(i, j), 0.0);
      EXPECT_LE(W(i, j), 1.0);
    }
}

TEST(Affinity, Errors) {
  EXPECT_THROW(affinity(Matrix<double>(Matrix<double>::Zero(1, 2)), 1.0), ArgumentError);
  Matrix<double> e = Matrix<double>::Zero(3, 2);
  e(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(affinity(e, 1.0), NumericError);
}

TEST(Normalize, TwoNodes) {
  Matrix<double> W(2, 2);
  W << 0, 0.4, 0.4, 0;
  const auto S = normalize_affinity(W);
  EXPECT_NEAR(S(0, 1), 1.0, 1e-15);
  EXPECT_NEAR(S(1, 0), 1.0, 1e-15);
}

TEST(Normalize, CompleteGraphOfThree) {
  Matrix<double> W = Matrix<double>::Ones(3, 3);
  W.diagonal().setZero();
  const auto S = normalize_affinity(W);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(S(i, j), i == j ? 0.0 : 0.5, 1e-15);
}

TEST(Normalize, SpectrumInUnitInterval) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const auto e = random_matrix<double>(25, 2, rng);
    const auto S = normalize_affinity(affinity(e, 1.0));
    EXPECT_LT((S - S.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    const Eigen::MatrixXd dense = S;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    EXPECT_GE(es.eigenvalues().minCoeff(), -1.0 - 1e-12);
    EXPECT_LE(es.eigenvalues().maxCoeff(), 1.0 + 1e-12);
    EXPECT_NEAR(es.eigenvalues().maxCoeff(), 1.0, 1e-10);
  }
}

TEST(Normalize, IsolatedVertexIsDegenerate) {
  Matrix<double> e(3, 1);
  e << 0, 0.1, 1e3;  // exp(-1e6) underflows to 0
  try {
    normalize_affinity(affinity(e, 1.0));
    FAIL() << "expected DegeneracyError";
  } catch (const DegeneracyError& err) {
    EXPECT_EQ(err.row(), 2);
  }
}

TEST(SeedLabelMatrix, LayoutAndOneHot) {
  const std::vector<int> labeled = {0, 2};
  const std::vector<int> predicted = {1, 1, 0};
  const auto lm = seed_label_matrix(labeled, predicted, 3);
  EXPECT_EQ(lm.labeled_count, 2u);
  Matrix<double> expected(5, 3);
  expected << 1, 0, 0, 0, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 0;
  EXPECT_TRUE(lm.Y == expected);
  EXPECT_TRUE((lm.Y.rowwise().sum().array() == 1.0).all());
}

TEST(SeedLabelMatrix, NoUnlabeledRows) {
  const std::vector<int> labeled = {1, 0};
  const auto lm = seed_label_matrix(labeled, std::vector<int>{}, 2);
  EXPECT_EQ(lm.Y.rows(), 2);
  EXPECT_THROW(seed_label_matrix(std::vector<int>{3}, std::vector<int>{}, 2), ArgumentError);
}

TEST(Propagate, AlphaZeroReturnsY) {
  std::mt19937_64 rng(3);
  const auto p = random_problem(rng, 20, 3, 1.0);
  LlgcConfig cfg;
  cfg.alpha = 0.0;
  const auto r = propagate(p.S, p.Y, cfg);
  EXPECT_TRUE(r.F == p.Y);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations_used, 1);
}

TEST(Propagate, MatchesClosedFormAtTightTolerance) {
  std::mt19937_64 rng(4);
  LlgcConfig cfg;
  cfg.tolerance = 1e-10;
  cfg.max_iterations = 100000;
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = random_problem(rng, 40, 3, 1.0);
    const auto r = propagate(p.S, p.Y, cfg);
    ASSERT_TRUE(r.converged);
    EXPECT_LT((r.F - closed_form(p.S, p.Y, cfg.alpha)).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Propagate, DistanceToFixedPointContracts) {
  // Each update scales the error by alpha S, whose spectral norm is alpha.
  std::mt19937_64 rng(5);
  const auto p = random_problem(rng, 30, 4, 1.0);
  const double alpha = 0.9;
  const auto Fstar = closed_form(p.S, p.Y, alpha);
  std::vector<double> err;
  LlgcConfig cfg;
  cfg.alpha = alpha;
  cfg.max_iterations = 50;
  cfg.tolerance = 1e-300;
  propagate(p.S, p.Y, cfg, [&](int, const Matrix<double>& F) { err.push_back((F - Fstar).norm()); });
  ASSERT_EQ(err.size(), 51u);
  for (std::size_t t = 1; t < err.size(); ++t) EXPECT_LE(err[t], alpha * err[t - 1] * (1 + 1e-9) + 1e-15);
}

TEST(Propagate, InvariantToScalingY) {
  std::mt19937_64 rng(6);
  const auto p = random_problem(rng, 25, 3, 1.0);
  LlgcConfig cfg;
  cfg.tolerance = 1e-12;
  cfg.max_iterations = 100000;
  const auto a = propagate(p.S, p.Y, cfg);
  const auto b = propagate(p.S, Matrix<double>(3.0 * p.Y), cfg);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Propagate, ReportsNonConvergence) {
  std::mt19937_64 rng(7);
  const auto p = random_problem(rng, 25, 3, 1.0);
  LlgcConfig cfg;
  cfg.max_iterations = 3;
  cfg.tolerance = 1e-12;
  const auto r = propagate(p.S, p.Y, cfg);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations_used, 3);
}

TEST(Propagate, ConfigValidation) {
  const Matrix<double> S = Matrix<double>::Zero(2, 2), Y = Matrix<double>::Identity(2, 2);
  LlgcConfig cfg;
  cfg.alpha = 1.0;
  EXPECT_THROW(propagate(S, Y, cfg), ArgumentError);
  cfg = {};
  cfg.sigma = 0;
  EXPECT_THROW(propagate(S, Y, cfg), ArgumentError);
  cfg = {};
  EXPECT_THROW(propagate(S, Matrix<double>(Matrix<double>::Zero(3, 2)), cfg), ArgumentError);
}

TEST(ClosedForm, TwoNodeExample) {
  // S = [[0,1],[1,0]], alpha = 0.5, Y = I:
  // (I - 0.5 S)^{-1} * 0.5 = [[2/3, 1/3], [1/3, 2/3]]
  Matrix<double> S(2, 2);
  S << 0, 1, 1, 0;
  const Matrix<double> Y = Matrix<double>::Identity(2, 2);
  const auto F = closed_form(S, Y, 0.5);
  EXPECT_NEAR(F(0, 0), 2.0 / 3, 1e-15);
  EXPECT_NEAR(F(0, 1), 1.0 / 3, 1e-15);
  EXPECT_NEAR(F(1, 0), 1.0 / 3, 1e-15);
  EXPECT_NEAR(F(1, 1), 2.0 / 3, 1e-15);
}

TEST(ClosedForm, SmallResidual) {
  std::mt19937_64 rng(8);
  const auto p = random_problem(rng, 60, 3, 1.0);
  const auto F = closed_form(p.S, p.Y, 0.99);
  const Matrix<double> A = Matrix<double>::Identity(60, 60) - 0.99 * p.S;
  EXPECT_LT((A * F - 0.01 * p.Y).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(ClosedForm, RejectsAlphaOutOfRange) {
  const Matrix<double> S = Matrix<double>::Zero(2, 2), Y = Matrix<double>::Identity(2, 2);
  EXPECT_THROW(closed_form(S, Y, 1.0), NumericError);
  EXPECT_THROW(closed_form(S, Y, -0.1), NumericError);
}

TEST(Harden, ArgmaxAndScoreForUnlabeledRows) {
  Matrix<double> F(4, 3);
  F << 9, 9, 9,  //
      0.1, 0.7, 0.2,  //
      0.5, 0.1, 0.5,  //
      0.0, 0.0, 0.3;
  const auto h = harden(F, 1);
  EXPECT_EQ(h.labels, (std::vector<int>{1, 0, 2}));
  EXPECT_EQ(h.scores, (std::vector<double>{0.7, 0.5, 0.3}));
  EXPECT_TRUE(harden(F, 4).labels.empty());
}

TEST(SelectTopByScore, DescendingStable) {
  const std::vector<double> scores = {0.2, 0.9, 0.5, 0.9, 0.1};
  EXPECT_EQ(select_top_by_score(scores, 60, 5), (std::vector<std::size_t>{1, 3, 2}));
  EXPECT_EQ(select_top_by_score(scores, 10, 1000).size(), 5u);
  EXPECT_EQ(select_top_by_score(scores, 1, 5).size(), 1u);
}

TEST(WritePropagationCsv, HeaderAndRows) {
  testing::TempDir dir;
  PropagationResult r;
  r.F = Matrix<double>(2, 2);
  r.F << 1, 0, 0.25, 0.5;
  detail::fill_hardened(r);
  write_propagation_csv(r, 1, dir.file("p.csv"));
  std::ifstream in(dir.file("p.csv"));
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), "row,labeled,f0,f1,label,score\n0,1,1,0,0,1\n1,0,0.25,0.5,1,0.5\n");
}

}  // namespace
}  // namespace siamssl
