#include "helpers.hpp"

#include "lokt/datasets.hpp"
#include "lokt/glyphs.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <numeric>
#include <set>

using namespace lokt;
using namespace lokt::data;
using lokt::testing::constant_backend;
using lokt::testing::FnBackend;
using lokt::testing::random_images;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lokt_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SplitPolicy digits_vs_letters(uint64_t seed = 0) {
  SplitPolicy p;
  p.private_per_class = 30;
  p.holdout_per_class = 5;
  p.public_dataset = "glyph-letters";
  p.public_size = 200;
  p.seed = seed;
  return p;
}

}  // namespace

TEST(Glyphs, RendererStaysInPixelRange) {
  auto set = glyphs::render_set(glyphs::digit_masks(), 3, 1, {});
  EXPECT_EQ(set.images.size(0), 30);
  EXPECT_TRUE(PixelRange{}.contains(set.images));
}

TEST(Split, TenClassPrivateWithDisjointPublicCompanion) {
  auto s = load_and_split(DatasetRegistry::builtin(), "glyph-digits", digits_vs_letters());
  EXPECT_EQ(s.num_private_classes, 10);
  EXPECT_EQ(s.private_images.size(0), 300);
  EXPECT_EQ(s.holdout_images.size(0), 50);
  EXPECT_EQ(s.public_images.size(0), 200);
  EXPECT_EQ(lokt::data::histogram(s.private_labels, 10), std::vector<int64_t>(10, 30));
  EXPECT_EQ(s.image_shape, (ImageShape{16, 16, 1}));
}

TEST(Split, SameSeedIsByteIdentical) {
  auto a = load_and_split(DatasetRegistry::builtin(), "glyph-digits", digits_vs_letters(4));
  auto b = load_and_split(DatasetRegistry::builtin(), "glyph-digits", digits_vs_letters(4));
  auto c = load_and_split(DatasetRegistry::builtin(), "glyph-digits", digits_vs_letters(5));
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_TRUE(torch::equal(a.private_images, b.private_images));
  EXPECT_TRUE(torch::equal(a.public_images, b.public_images));
  EXPECT_NE(a.digest(), c.digest());
}

TEST(Split, SameDatasetRequiresDisjointClasses) {
  SplitPolicy p;
  p.private_classes = {0, 1, 2};
  p.public_classes = {2, 3};
  p.private_per_class = 5;
  p.holdout_per_class = 0;
  EXPECT_THROW(load_and_split(DatasetRegistry::builtin(), "glyph-digits", p), ConfigError);
  p.public_classes = {3, 4};
  auto s = load_and_split(DatasetRegistry::builtin(), "glyph-digits", p);
  EXPECT_EQ(s.num_private_classes, 3);
  EXPECT_EQ(s.private_labels.max().item<int64_t>(), 2);
}

TEST(Split, SaveLoadRoundTrip) {
  auto dir = temp_dir("split");
  auto s = load_and_split(DatasetRegistry::builtin(), "glyph-digits", digits_vs_letters());
  save_split(s, dir);
  auto r = load_split(dir);
  EXPECT_EQ(r.digest(), s.digest());
  EXPECT_EQ(r.num_private_classes, 10);
  fs::remove_all(dir);
}

TEST(Split, IdentityScaleIdxSizesMatch) {
  // 1,000 private identities with 30,027 images, 30,000 public images.
  auto dir = temp_dir("idx");
  std::vector<int64_t> labels;
  for (int64_t c = 0; c < 1000; ++c) {
    for (int64_t k = 0; k < (c < 27 ? 31 : 30); ++k) {
      labels.push_back(c);
    }
  }
  ASSERT_EQ(labels.size(), 30027U);
  auto gen = make_generator(1);
  auto priv_px = torch::randint(0, 256, {30027, 4, 4}, gen, torch::kUInt8);
  write_idx(dir / "priv-images.idx", dir / "priv-labels.idx", priv_px, torch::tensor(labels));
  auto pub_px = torch::randint(0, 256, {30000, 4, 4}, gen, torch::kUInt8);
  write_idx(dir / "pub-images.idx", dir / "pub-labels.idx", pub_px, torch::zeros({30000}, torch::kInt64));
  auto reg = DatasetRegistry::parse(
      "# identity-scale layout\n"
      "[faces-private]\nkind = idx\nimages = priv-images.idx\nlabels = priv-labels.idx\n"
      "[faces-public]\nkind = idx\nimages = pub-images.idx\nlabels = pub-labels.idx\n",
      dir);
  SplitPolicy p;
  p.private_per_class = -1;
  p.holdout_per_class = 0;
  p.public_dataset = "faces-public";
  p.public_size = -1;
  auto s = load_and_split(reg, "faces-private", p);
  EXPECT_EQ(s.num_private_classes, 1000);
  EXPECT_EQ(s.private_images.size(0), 30027);
  EXPECT_EQ(s.public_images.size(0), 30000);
  fs::remove_all(dir);
}

TEST(Idx, RoundTripMapsPixelsToUnitRange) {
  auto dir = temp_dir("idxrt");
  auto px = torch::tensor({0, 255, 128, 64}, torch::kUInt8).view({1, 2, 2});
  write_idx(dir / "i", dir / "l", px, torch::tensor({7}));
  auto r = read_idx(dir / "i", dir / "l");
  EXPECT_EQ(r.labels[0].item<int64_t>(), 7);
  EXPECT_FLOAT_EQ(r.images[0][0][0][0].item<float>(), -1.0F);
  EXPECT_FLOAT_EQ(r.images[0][0][0][1].item<float>(), 1.0F);
  fs::remove_all(dir);
}

TEST(PseudoLabels, ConstantOracleFillsOneBin) {
  const ImageShape shape{16, 16, 1};
  oracle::HardLabelOracle o(constant_backend(10, shape, 3));
  auto pub = random_images(77, shape, 1);
  auto ds = build_pseudo_labeled_public(pub, o);
  std::vector<int64_t> expected(10, 0);
  expected[3] = 77;
  EXPECT_EQ(ds.class_histogram, expected);
  EXPECT_TRUE((ds.labels == 3).all().item<bool>());
}

TEST(PseudoLabels, OneQueryPerPublicImage) {
  const ImageShape shape{16, 16, 1};
  for (int64_t n : {1, 128, 255, 256, 257, 600}) {
    oracle::HardLabelOracle o(lokt::testing::linear_backend(10, shape, 2));
    build_pseudo_labeled_public(random_images(n, shape, 3), o);
    EXPECT_EQ(o.ledger_report().total, n);
    EXPECT_EQ(o.ledger_report().at(oracle::QueryPhase::PublicRelabeling), n);
  }
}

TEST(PseudoLabels, SkewedOracleHistogramMatchesRecount) {
  const ImageShape shape{16, 16, 1};
  // Skewed: class determined by mean brightness thresholds.
  auto backend = std::make_shared<FnBackend>(4, shape, [](const torch::Tensor& x) {
    auto m = x.mean({1, 2, 3});
    auto cls = (m > -0.02).to(torch::kInt64) + (m > 0.0).to(torch::kInt64) + (m > 0.05).to(torch::kInt64);
    return torch::one_hot(cls, 4).to(torch::kFloat32);
  });
  oracle::HardLabelOracle o(backend);
  auto pub = random_images(300, shape, 9);
  auto ds = build_pseudo_labeled_public(pub, o);
  std::vector<int64_t> recount(4, 0);
  oracle::HardLabelOracle single(backend);
  for (int64_t i = 0; i < pub.size(0); ++i) {
    recount[static_cast<size_t>(single.query(pub.slice(0, i, i + 1), oracle::QueryPhase::Other)[0].item<int64_t>())]++;
  }
  EXPECT_EQ(ds.class_histogram, recount);
}

TEST(Balance, TopsUpNonEmptyClassesAndFlagsEmptyOnes) {
  auto x = random_images(12, {8, 8, 1}, 1);
  auto y = torch::cat({torch::zeros({10}, torch::kInt64), torch::ones({2}, torch::kInt64)});
  auto ds = PseudoLabeledDataset::make(x, y, LabelSource::PublicRelabeled, 3);
  ASSERT_EQ(ds.class_histogram, (std::vector<int64_t>{10, 2, 0}));
  auto b = balance_by_augmentation(ds, 10, AugmentationPolicy{});
  EXPECT_EQ(b.dataset.class_histogram, (std::vector<int64_t>{10, 10, 0}));
  EXPECT_EQ(b.coverage.empty_classes, (std::vector<int64_t>{2}));
  EXPECT_TRUE(PixelRange{}.contains(b.dataset.images));
  EXPECT_THROW(balance_by_augmentation(ds, 5, AugmentationPolicy{}), Error);
}

TEST(Balance, NeverTouchesTheOracle) {
  const ImageShape shape{8, 8, 1};
  oracle::HardLabelOracle o(lokt::testing::linear_backend(5, shape, 1));
  auto ds = build_pseudo_labeled_public(random_images(50, shape, 2), o);
  auto before = o.ledger_report();
  balance_by_augmentation(ds, *std::max_element(ds.class_histogram.begin(), ds.class_histogram.end()), {});
  EXPECT_EQ(o.ledger_report(), before);
}

TEST(Balance, PropertiesOnRandomToySets) {
  for (uint64_t seed = 0; seed < 25; ++seed) {
    auto gen = make_generator(seed);
    const int64_t n = 5;
    auto y = torch::randint(0, n, {40}, gen, torch::kInt64);
    // Drop one class entirely in some trials.
    if (seed % 3 == 0) {
      y = torch::where(y == 4, torch::zeros_like(y), y);
    }
    auto ds = PseudoLabeledDataset::make(random_images(40, {6, 6, 1}, seed), y,
                                         LabelSource::PublicRelabeled, n);
    const auto target = *std::max_element(ds.class_histogram.begin(), ds.class_histogram.end());
    AugmentationPolicy pol;
    pol.seed = seed;
    auto b = balance_by_augmentation(ds, target, pol);
    EXPECT_LE(coefficient_of_variation(b.dataset.class_histogram),
              coefficient_of_variation(ds.class_histogram) + 1e-12);
    std::set<int64_t> in_labels;
    for (int64_t c = 0; c < n; ++c) {
      if (ds.class_histogram[static_cast<size_t>(c)] > 0) {
        in_labels.insert(c);
      }
    }
    for (int64_t c = 0; c < n; ++c) {
      if (!in_labels.count(c)) {
        EXPECT_EQ(b.dataset.class_histogram[static_cast<size_t>(c)], 0);
      }
    }
  }
}

TEST(PseudoLabels, ContainerRoundTrip) {
  auto dir = temp_dir("container");
  auto ds = PseudoLabeledDataset::make(random_images(9, {4, 4, 1}, 1),
                                       torch::tensor({0, 1, 2, 0, 1, 2, 0, 1, 2}),
                                       LabelSource::Synthetic, 3);
  save_pseudo_labeled(ds, dir, "fake");
  auto r = load_pseudo_labeled(dir, "fake");
  EXPECT_TRUE(torch::equal(r.images, ds.images));
  EXPECT_TRUE(torch::equal(r.labels, ds.labels));
  EXPECT_EQ(r.source, LabelSource::Synthetic);
  EXPECT_THROW(PseudoLabeledDataset::make(ds.images, ds.labels + 5, LabelSource::Synthetic, 3), DataError);
  fs::remove_all(dir);
}
