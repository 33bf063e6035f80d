#include "helpers.hpp"

#include "lokt/evaluation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

using namespace lokt;
using namespace lokt::eval;
using lokt::testing::LinearNet;

namespace {

/// E whose penultimate features are the raw (1, 1, d) pixels.
EvaluationModel feature_model(int64_t d, int64_t n, uint64_t seed) {
  return {std::make_shared<LinearNet>(d, n, seed), {}};
}

inversion::ReconstructionSet make_set(int64_t cls, const torch::Tensor& images) {
  inversion::ReconstructionSet r;
  r.target_class = cls;
  for (int64_t i = 0; i < images.size(0); ++i) {
    inversion::Candidate c;
    c.index = i;
    c.image = images[i];
    r.candidates.push_back(c);
  }
  return r;
}

torch::Tensor as_images(const torch::Tensor& feats) {
  return feats.reshape({feats.size(0), 1, 1, feats.size(1)}).to(torch::kFloat32);
}

}  // namespace

TEST(Knn, HandComputedExample) {
  auto E = feature_model(2, 1, 0);
  auto priv = as_images(torch::tensor({{0.0, 0.0}, {3.0, 4.0}}));
  auto labels = torch::zeros({2}, torch::kInt64);
  auto k0 = knn_distance({make_set(0, as_images(torch::tensor({{0.0, 0.0}})))}, priv, labels, E);
  EXPECT_DOUBLE_EQ(k0.mean, 0.0);
  auto k3 = knn_distance({make_set(0, as_images(torch::tensor({{3.0, 0.0}})))}, priv, labels, E);
  EXPECT_DOUBLE_EQ(k3.mean, 3.0);
}

TEST(Knn, IdenticalToPrivateImageIsZero) {
  auto E = feature_model(5, 3, 0);
  auto gen = make_generator(1);
  auto priv = torch::randn({6, 1, 1, 5}, gen);
  auto labels = torch::tensor({0, 1, 2, 0, 1, 2});
  auto k = knn_distance({make_set(1, priv.slice(0, 4, 5))}, priv, labels, E);
  EXPECT_DOUBLE_EQ(k.per_class[0], 0.0);
}

TEST(Knn, MatchesBruteForceOnRandomSets) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 100; ++trial) {
    const int64_t d = 1 + static_cast<int64_t>(rng() % 6);
    const int64_t n_cls = 1 + static_cast<int64_t>(rng() % 4);
    auto gen = make_generator(static_cast<uint64_t>(trial));
    auto E = feature_model(d, n_cls, 0);
    // Every class gets at least one private sample.
    const int64_t n_priv = n_cls + static_cast<int64_t>(rng() % 10);
    auto labels = torch::cat({torch::arange(n_cls), torch::randint(0, n_cls, {n_priv - n_cls}, gen)});
    auto priv = torch::randn({n_priv, 1, 1, d}, gen);
    std::vector<inversion::ReconstructionSet> sets;
    double expected_sum = 0.0;
    for (int64_t c = 0; c < n_cls; ++c) {
      const int64_t m = 1 + static_cast<int64_t>(rng() % 5);
      auto rec = torch::randn({m, 1, 1, d}, gen);
      sets.push_back(make_set(c, rec));
      double cls_sum = 0.0;
      for (int64_t i = 0; i < m; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < n_priv; ++j) {
          if (labels[j].item<int64_t>() != c) {
            continue;
          }
          double sq = 0.0;
          for (int64_t k = 0; k < d; ++k) {
            const double diff = static_cast<double>(rec[i][0][0][k].item<float>()) -
                                static_cast<double>(priv[j][0][0][k].item<float>());
            sq += diff * diff;
          }
          best = std::min(best, std::sqrt(sq));
        }
        cls_sum += best;
      }
      expected_sum += cls_sum / static_cast<double>(m);
    }
    auto k = knn_distance(sets, priv, labels, E);
    EXPECT_NEAR(k.mean, expected_sum / static_cast<double>(n_cls), 1e-9) << "trial " << trial;
  }
}

TEST(MinDistances, BruteForce) {
  auto a = torch::tensor({{0.0, 0.0}, {3.0, 0.0}});
  auto b = torch::tensor({{0.0, 0.0}, {3.0, 4.0}});
  EXPECT_EQ(min_distances(a, b), (std::vector<double>{0.0, 3.0}));
}

TEST(AttackAccuracy, CopiesOfCorrectlyClassifiedPrivateImagesScore100) {
  // E = identity logits over one-hot "images".
  auto net = std::make_shared<LinearNet>(4, 4, 0);
  {
    torch::NoGradGuard ng;
    net->w.copy_(torch::eye(4));
  }
  EvaluationModel E{net, {}};
  std::vector<inversion::ReconstructionSet> sets;
  for (int64_t c = 0; c < 4; ++c) {
    sets.push_back(make_set(c, as_images(torch::one_hot(torch::tensor({c, c}), 4))));
  }
  auto a = attack_accuracy(sets, E, 4);
  EXPECT_DOUBLE_EQ(a.mean, 100.0);
}

TEST(AttackAccuracy, EqualsDirectRecountAndIgnoresOrder) {
  auto gen = make_generator(5);
  auto E = feature_model(6, 5, 3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<inversion::ReconstructionSet> sets;
    int64_t hits = 0;
    int64_t total = 0;
    std::vector<double> per_class;
    for (int64_t c = 0; c < 5; ++c) {
      auto rec = torch::randn({3, 1, 1, 6}, gen);
      sets.push_back(make_set(c, rec));
      auto pred = rec.reshape({3, 6}).matmul(std::static_pointer_cast<LinearNet>(E.net)->w).argmax(1);
      const auto h = pred.eq(c).sum().item<int64_t>();
      hits += h;
      total += 3;
      per_class.push_back(100.0 * static_cast<double>(h) / 3.0);
    }
    auto a = attack_accuracy(sets, E, 5);
    EXPECT_NEAR(a.mean, 100.0 * static_cast<double>(hits) / static_cast<double>(total), 1e-9);
    for (size_t c = 0; c < 5; ++c) {
      EXPECT_NEAR(a.per_class[c], per_class[c], 1e-9);
    }
    auto shuffled = sets;
    for (auto& s : shuffled) {
      std::reverse(s.candidates.begin(), s.candidates.end());
    }
    std::reverse(shuffled.begin(), shuffled.end());
    EXPECT_DOUBLE_EQ(attack_accuracy(shuffled, E, 5).mean, a.mean);
  }
}

TEST(AttackAccuracy, UniformNoiseIsNearChance) {
  double sum = 0.0;
  const int trials = 30;
  for (int t = 0; t < trials; ++t) {
    auto E = feature_model(16, 10, static_cast<uint64_t>(100 + t));
    auto gen = make_generator(static_cast<uint64_t>(t));
    std::vector<inversion::ReconstructionSet> sets;
    for (int64_t c = 0; c < 10; ++c) {
      sets.push_back(make_set(c, torch::rand({50, 1, 1, 16}, gen) * 2 - 1));
    }
    sum += attack_accuracy(sets, E, 10).mean;
  }
  EXPECT_NEAR(sum / trials, 10.0, 3.0);
}

TEST(AttackAccuracy, RequiresEveryClass) {
  auto E = feature_model(2, 3, 0);
  EXPECT_THROW(attack_accuracy({make_set(0, torch::zeros({1, 1, 1, 2}))}, E, 3), DataError);
}

TEST(EvaluationModel, RejectsTargetArchitectureAndKeepsDigestAcrossReloads) {
  auto gen = make_generator(2);
  auto x = torch::rand({20, 1, 16, 16}, gen) * 2 - 1;
  auto y = torch::arange(20) % 2;
  oracle::TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train_eval_model(x, y, x, y, 2, "cnn-t", "cnn-t", cfg), ConfigError);
  auto E = train_eval_model(x, y, x, y, 2, "cnn-e", "cnn-t", cfg);
  auto dir = std::filesystem::temp_directory_path() / "lokt_test_eval_model";
  std::filesystem::remove_all(dir);
  save_eval_model(E, dir / "a");
  auto r = load_eval_model(dir / "a");
  save_eval_model(r, dir / "b");
  auto d1 = load_eval_model(dir / "a").manifest.at("weights_digest");
  auto d2 = load_eval_model(dir / "b").manifest.at("weights_digest");
  EXPECT_EQ(d1, d2);
  EXPECT_TRUE(torch::equal(E.features(x), r.features(x)));
  std::filesystem::remove_all(dir);
}

TEST(MetricReport, AggregatesWithPopulationStd) {
  std::vector<AccuracyFragment> acc = {{{90.0}, 90.0}, {{100.0}, 100.0}, {{100.0}, 100.0}};
  std::vector<KnnFragment> knn = {{{1.0}, 1.0}, {{2.0}, 2.0}, {{3.0}, 3.0}};
  auto row = aggregate("desk", "conditional", "s_en", acc, knn, 1234);
  EXPECT_NEAR(row.attack_acc_mean, 96.6667, 1e-3);
  EXPECT_NEAR(row.attack_acc_std, std::sqrt(200.0 / 9.0), 1e-9);
  EXPECT_DOUBLE_EQ(row.knn_mean, 2.0);
  MetricReport rep;
  rep.rows.push_back(row);
  const auto csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "setup,attack,surrogate_design,attack_acc_mean,attack_acc_std,knn_mean,queries_total");
  auto back = MetricReport::from_json(rep.to_json());
  ASSERT_NE(back.find("conditional", "s_en"), nullptr);
  EXPECT_EQ(back.find("conditional", "s_en")->queries_total, 1234);
}
