#include "siamssl/data.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>

namespace siamssl {
namespace {

void write_idx_images(const std::string& path, std::uint32_t magic, std::uint32_t count, std::uint32_t rows,
                      std::uint32_t cols, const std::vector<unsigned char>& pixels) {
  std::ofstream out(path, std::ios::binary);
  for (std::uint32_t v : {magic, count, rows, cols}) detail::write_be32(out, v);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::string& path, std::uint32_t count, const std::vector<unsigned char>& labels) {
  std::ofstream out(path, std::ios::binary);
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, count);
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

TEST(LoadIdx, ScalesBytesIntoUnitInterval) {
  testing::TempDir dir;
  const auto img = dir.file("img");
  const auto lab = dir.file("lab");
  write_idx_images(img, kIdxImagesMagic, 2, 2, 2, {0, 255, 51, 102, 255, 0, 0, 0});
  write_idx_labels(lab, 2, {3, 7});
  const auto ds = load_idx(img, lab);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.shape, (Shape{2, 2, 1}));
  EXPECT_EQ(ds.features, (std::vector<float>{0.0f, 1.0f, 0.2f, 0.4f, 1.0f, 0.0f, 0.0f, 0.0f}));
  EXPECT_EQ(ds.labels, (std::vector<int>{3, 7}));
  EXPECT_EQ(ds.num_classes, 8);
  EXPECT_NO_THROW(ds.validate());
}

TEST(LoadIdx, RejectsBadMagic) {
  testing::TempDir dir;
  const auto img = dir.file("img");
  write_idx_images(img, 0x00000802, 1, 1, 1, {0});
  EXPECT_THROW(load_idx(img, ""), FormatError);
}

TEST(LoadIdx, RejectsLabelCountMismatch) {
  testing::TempDir dir;
  const auto img = dir.file("img");
  const auto lab = dir.file("lab");
  write_idx_images(img, kIdxImagesMagic, 2, 2, 2, std::vector<unsigned char>(8, 0));
  write_idx_labels(lab, 3, {0, 1, 2});
  EXPECT_THROW(load_idx(img, lab), ConsistencyError);
}

TEST(LoadIdx, RejectsTruncatedPixels) {
  testing::TempDir dir;
  const auto img = dir.file("img");
  write_idx_images(img, kIdxImagesMagic, 3, 2, 2, std::vector<unsigned char>(8, 0));
  EXPECT_THROW(load_idx(img, ""), FormatError);
}

TEST(LoadIdx, BundledMnistSubset) {
  const auto root = testing::data_dir() + "/mnist-subset/";
  if (!std::filesystem::exists(root + "train-images-idx3-ubyte")) GTEST_SKIP() << "MNIST subset not present";
  const auto ds = load_idx(root + "train-images-idx3-ubyte", root + "train-labels-idx1-ubyte");
  EXPECT_EQ(ds.size(), 5000u);
  EXPECT_EQ(ds.shape, (Shape{28, 28, 1}));
  EXPECT_EQ(ds.num_classes, 10);
  for (float v : ds.features) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(SaveIdx, RoundTripsBytes) {
  testing::TempDir dir;
  Dataset ds;
  ds.shape = {2, 3, 1};
  for (int i = 0; i < 12; ++i) ds.features.push_back(static_cast<float>(i * 20) / 255.0f);
  ds.labels = {4, 1};
  ds.num_classes = 5;
  save_idx(ds, dir.file("i"), dir.file("l"));
  const auto back = load_idx(dir.file("i"), dir.file("l"));
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(MakeBlobs, ZeroVariancePutsPointsOnCenters) {
  const auto ds = make_blobs(4, {{0, 0}, {10, 10}}, 0.0, 1);
  ASSERT_EQ(ds.size(), 8u);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const float c = ds.labels[i] == 0 ? 0.0f : 10.0f;
    EXPECT_EQ(ds.example(i)[0], c);
    EXPECT_EQ(ds.example(i)[1], c);
  }
}

TEST(MakeBlobs, DeterministicInSeed) {
  const auto a = make_blobs(20, {{0, 0}, {1, 1}}, 0.5, 42);
  const auto b = make_blobs(20, {{0, 0}, {1, 1}}, 0.5, 42);
  const auto c = make_blobs(20, {{0, 0}, {1, 1}}, 0.5, 43);
  EXPECT_EQ(a.features, b.features);
  EXPECT_NE(a.features, c.features);
}

TEST(MakeBlobs, ClassCounts) {
  const auto ds = make_blobs(100, {{0, 0}, {3, 0}, {0, 3}}, 1.0, 5);
  EXPECT_EQ(ds.size(), 300u);
  EXPECT_EQ(ds.num_classes, 3);
  std::map<int, int> hist;
  for (int y : ds.labels) ++hist[y];
  EXPECT_EQ(hist, (std::map<int, int>{{0, 100}, {1, 100}, {2, 100}}));
}

TEST(MakeBlobs, ArgumentErrors) {
  EXPECT_THROW(make_blobs(0, {{0}, {1}}, 1.0, 1), ArgumentError);
  EXPECT_THROW(make_blobs(5, {{0}}, 1.0, 1), ArgumentError);
  EXPECT_THROW(make_blobs(5, {{0}, {1}}, -1.0, 1), ArgumentError);
}

TEST(SplitBalanced, TenPerClassOnMnistSizedSet) {
  // Label layout of a 60000-example, 10-class training set.
  Dataset ds;
  ds.shape = {1, 1, 1};
  ds.num_classes = 10;
  for (int i = 0; i < 60000; ++i) {
    ds.features.push_back(0.0f);
    ds.labels.push_back(i % 10);
  }
  const auto split = split_balanced(ds, 100, 3);
  EXPECT_EQ(split.labeled_idx.size(), 100u);
  EXPECT_EQ(split.unlabeled_idx.size(), 59900u);
  std::map<int, int> hist;
  for (std::size_t i : split.labeled_idx) ++hist[ds.labels[i]];
  for (int k = 0; k < 10; ++k) EXPECT_EQ(hist[k], 10);
}

TEST(SplitBalanced, WholeDatasetLeavesEmptyPool) {
  const auto ds = make_blobs(5, {{0}, {1}, {2}}, 1.0, 1);
  const auto split = split_balanced(ds, 15, 1);
  EXPECT_EQ(split.labeled_idx.size(), 15u);
  EXPECT_TRUE(split.unlabeled_idx.empty());
}

TEST(SplitBalanced, IndivisibleCountIsArgumentError) {
  const auto ds = make_blobs(50, {{0}, {1}, {2}}, 1.0, 1);
  EXPECT_THROW(split_balanced(ds, 100, 1), ArgumentError);
}

TEST(SplitBalanced, TooFewExamplesInClass) {
  const auto ds = make_blobs(3, {{0}, {1}}, 1.0, 1);
  EXPECT_THROW(split_balanced(ds, 8, 1), ArgumentError);
}

TEST(SplitBalanced, PartitionHistogramAndDeterminismProperty) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const int c = 2 + static_cast<int>(rng() % 5);
    const int per_class = 3 + static_cast<int>(rng() % 20);
    std::vector<std::vector<double>> centers;
    for (int k = 0; k < c; ++k) centers.push_back({static_cast<double>(k)});
    const auto ds = make_blobs(per_class, centers, 1.0, rng());
    const std::size_t n_labeled = static_cast<std::size_t>(c) * (1 + rng() % static_cast<std::uint64_t>(per_class));
    const std::uint64_t seed = rng();
    const auto a = split_balanced(ds, n_labeled, seed);
    const auto b = split_balanced(ds, n_labeled, seed);
    EXPECT_EQ(a.labeled_idx, b.labeled_idx);
    EXPECT_EQ(a.unlabeled_idx, b.unlabeled_idx);
    EXPECT_EQ(a.labeled_idx.size() + a.unlabeled_idx.size(), ds.size());
    std::vector<int> seen(ds.size(), 0);
    for (auto i : a.labeled_idx) ++seen[i];
    for (auto i : a.unlabeled_idx) ++seen[i];
    for (int s : seen) ASSERT_EQ(s, 1);
    std::map<int, std::size_t> hist;
    for (auto i : a.labeled_idx) ++hist[ds.labels[i]];
    for (int k = 0; k < c; ++k) EXPECT_EQ(hist[k], n_labeled / static_cast<std::size_t>(c));
  }
}

TEST(Csv, RoundTripWithUnlabeledRows) {
  testing::TempDir dir;
  auto ds = make_blobs(3, {{0, 1}, {2, 3}}, 0.7, 11);
  ds.labels[1] = kUnlabeled;
  write_csv(ds, dir.file("d.csv"));
  const auto back = read_csv(dir.file("d.csv"));
  EXPECT_EQ(back.shape, ds.shape);
  EXPECT_EQ(back.features, ds.features);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.num_classes, 2);
}

TEST(Csv, MalformedRowNamesLine) {
  testing::TempDir dir;
  {
    std::ofstream out(dir.file("bad.csv"));
    out << "x0,x1,label\n1,2,0\n3,oops,1\n";
  }
  try {
    read_csv(dir.file("bad.csv"));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace siamssl
