#include "helpers.hpp"

#include "lokt/inversion.hpp"

#include <cmath>
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

using namespace lokt;
using namespace lokt::inversion;
using lokt::testing::IdentityGenerator;
using lokt::testing::LinearNet;

namespace {

constexpr int64_t kDim = 8;
constexpr int64_t kClasses = 4;

std::shared_ptr<surrogate::SurrogateModel> linear_surrogate(uint64_t seed, double scale = 1.0) {
  auto net = std::make_shared<LinearNet>(kDim, kClasses, seed);
  {
    torch::NoGradGuard ng;
    net->w.mul_(scale);
  }
  return std::make_shared<surrogate::SurrogateModel>(net, surrogate::Provenance::SyntheticTrained);
}

/// Critic whose realness peaks at a fixed point: -||x - x*||^2.
struct PointCritic : nn::SourceCritic {
  torch::Tensor target;
  explicit PointCritic(torch::Tensor t) : target(std::move(t)) {}
  torch::Tensor realness(const torch::Tensor& x) override {
    return -(x.reshape({x.size(0), -1}) - target.view({1, -1})).pow(2).sum(1);
  }
};

InversionConfig toy_conditional(uint64_t seed) {
  auto c = InversionConfig::conditional_defaults();
  c.steps = 200;
  c.step_size = 0.1;
  c.candidates_per_class = 3;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(InvertConditional, LogisticToyReachesHighLikelihoodWithin200Steps) {
  IdentityGenerator G(kDim);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto S = linear_surrogate(1000 + seed);
    for (int64_t y = 0; y < kClasses; ++y) {
      auto r = invert_conditional(G, *S, y, toy_conditional(seed));
      for (const auto& c : r.candidates) {
        EXPECT_GT(c.final_likelihood, 0.99) << "seed " << seed << " class " << y;
        EXPECT_EQ(c.trajectory.size(), 201U);
        EXPECT_FALSE(c.aborted);
        // Closed form: the class posterior of a linear softmax at z.
        torch::NoGradGuard ng;
        auto p = torch::softmax(c.latent.view({1, -1}).matmul(
                                    std::static_pointer_cast<LinearNet>(S->net())->w), 1)[0][y];
        EXPECT_NEAR(p.item<double>(), c.final_likelihood, 1e-5);
      }
    }
  }
}

TEST(InvertConditional, PlateauStartKeepsTrajectoryConstant) {
  // With all weights zero the likelihood is 1/N everywhere and the gradient
  // vanishes.
  auto S = linear_surrogate(1, 0.0);
  IdentityGenerator G(kDim);
  auto r = invert_conditional(G, *S, 2, toy_conditional(3));
  for (const auto& c : r.candidates) {
    for (double v : c.trajectory) {
      EXPECT_DOUBLE_EQ(v, c.trajectory.front());
    }
  }
}

TEST(InvertPriorRegularized, ZeroWeightEqualsPureAscentBitwise) {
  auto S = linear_surrogate(5);
  IdentityGenerator G(kDim);
  PointCritic D(torch::ones({kDim}));
  auto cfg = InversionConfig::prior_defaults(0.0);
  cfg.steps = 50;
  cfg.candidates_per_class = 4;
  cfg.seed = 11;
  auto prior = invert_prior_regularized(G, D, *S, 1, cfg);
  auto plain_cfg = cfg;
  plain_cfg.style = Style::ConditionalAscent;
  // The identity generator ignores its label, so conditional ascent is pure
  // likelihood ascent with the same optimizer and seed.
  auto plain = invert_conditional(G, *S, 1, plain_cfg);
  ASSERT_EQ(prior.candidates.size(), plain.candidates.size());
  for (size_t i = 0; i < prior.candidates.size(); ++i) {
    EXPECT_TRUE(torch::equal(prior.candidates[i].latent, plain.candidates[i].latent));
    EXPECT_EQ(prior.candidates[i].trajectory, plain.candidates[i].trajectory);
  }
}

TEST(InvertPriorRegularized, LargeWeightCollapsesTowardCriticOptimum) {
  auto S = linear_surrogate(6);
  IdentityGenerator G(kDim);
  auto star = torch::full({kDim}, 0.5F);
  PointCritic D(star);
  auto run = [&](double lambda) {
    auto cfg = InversionConfig::prior_defaults(lambda);
    cfg.steps = 300;
    cfg.step_size = 0.01;
    cfg.seed = 2;
    auto r = invert_prior_regularized(G, D, *S, 0, cfg);
    torch::NoGradGuard ng;
    return D.realness(r.images()).mean().item<double>();
  };
  const double weak = run(0.01);
  const double strong = run(10.0);
  EXPECT_GT(strong, weak);
  // At the stationary point 2λ‖x - x*‖ = ‖∇ log P_S‖ <= 2 max_c ‖w_c‖.
  const double bound = S->net()->parameters()[0].norm(2, {0}).max().item<double>() / 10.0;
  EXPECT_LE(std::sqrt(-strong), bound + 1e-3);
}

TEST(Inversion, ObjectiveGradientMatchesFiniteDifferences) {
  // Both objectives in double precision on a linear surrogate and a
  // quadratic critic.
  auto net = std::make_shared<LinearNet>(kDim, kClasses, 7);
  net->to(torch::kFloat64);
  surrogate::SurrogateModel S(net, surrogate::Provenance::SyntheticTrained);
  IdentityGenerator G(kDim);
  PointCritic D(torch::full({kDim}, 0.2, torch::kFloat64));
  auto gen = make_generator(3);
  const int64_t y = 2;
  for (double lambda : {0.0, 0.3}) {
    auto objective = [&](const torch::Tensor& z) {
      auto x = G.generate(z, torch::zeros({z.size(0)}, torch::kInt64));
      auto v = -S.log_probs(x).select(1, y);
      return (lambda > 0 ? v - lambda * D.realness(x) : v).sum();
    };
    for (int trial = 0; trial < 10; ++trial) {
      auto z = torch::randn({1, kDim}, gen).to(torch::kFloat64);
      auto zg = z.clone().requires_grad_(true);
      auto g = torch::autograd::grad({objective(zg)}, {zg})[0];
      const double h = 1e-6;
      for (int64_t k = 0; k < kDim; ++k) {
        auto up = z.clone();
        auto down = z.clone();
        up[0][k] += h;
        down[0][k] -= h;
        torch::NoGradGuard ng;
        const double num = (objective(up).item<double>() - objective(down).item<double>()) / (2 * h);
        const double ana = g[0][k].item<double>();
        EXPECT_LE(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-3}), 1e-4)
            << "lambda " << lambda << " trial " << trial << " dim " << k;
      }
    }
  }
}

TEST(Inversion, NeverTouchesTheOracle) {
  const ImageShape shape{1, kDim, 1};
  oracle::HardLabelOracle o(lokt::testing::linear_backend(kClasses, shape, 1));
  o.query(torch::zeros({3, 1, 1, kDim}), oracle::QueryPhase::Other);
  const auto before = o.ledger_report();
  auto S = linear_surrogate(8);
  IdentityGenerator G(kDim);
  PointCritic D(torch::zeros({kDim}));
  attack_all_classes(G, nullptr, *S, toy_conditional(1));
  auto pcfg = InversionConfig::prior_defaults(0.1);
  pcfg.steps = 20;
  attack_all_classes(G, &D, *S, pcfg);
  EXPECT_EQ(o.ledger_report(), before);
}

TEST(Inversion, SoftProbabilitiesAreUnreachableFromTheAttack) {
  // A surrogate that tries to peek at the target's soft outputs fails.
  const ImageShape shape{1, kDim, 1};
  auto backend = lokt::testing::linear_backend(kClasses, shape, 2);
  oracle::ExperimenterProbe probe(backend, oracle::ExperimenterProbe::grant());
  struct Peeking : surrogate::LikelihoodModel {
    const oracle::ExperimenterProbe* probe;
    torch::Tensor log_probs(const torch::Tensor& x) override { return probe->probabilities(x).log(); }
    int64_t num_classes() const override { return kClasses; }
    ImageShape input_shape() const override { return {1, kDim, 1}; }
    std::string id() const override { return "peeking"; }
  } peeking;
  peeking.probe = &probe;
  IdentityGenerator G(kDim);
  EXPECT_THROW(invert_conditional(G, peeking, 0, toy_conditional(1)), PrivilegeViolation);
}

TEST(Inversion, SameSeedSameDigest) {
  auto S = linear_surrogate(9);
  IdentityGenerator G(kDim);
  auto a = invert_conditional(G, *S, 3, toy_conditional(4));
  auto b = invert_conditional(G, *S, 3, toy_conditional(4));
  auto c = invert_conditional(G, *S, 3, toy_conditional(5));
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(a.digest(), c.digest());
}

TEST(Inversion, PositiveLogitScalingKeepsArgmax) {
  IdentityGenerator G(kDim);
  for (uint64_t seed = 0; seed < 5; ++seed) {
    auto S1 = linear_surrogate(50 + seed);
    auto S3 = linear_surrogate(50 + seed, 3.0);
    auto cfg = toy_conditional(seed);
    cfg.steps = 40;
    for (int64_t y = 0; y < kClasses; ++y) {
      auto r1 = invert_conditional(G, *S1, y, cfg);
      auto r3 = invert_conditional(G, *S3, y, cfg);
      torch::NoGradGuard ng;
      EXPECT_TRUE(torch::equal(S1->probabilities(r1.images()).argmax(1),
                               S3->probabilities(r1.images()).argmax(1)));
      EXPECT_TRUE(torch::equal(S3->probabilities(r3.images()).argmax(1),
                               S1->probabilities(r3.images()).argmax(1)));
    }
  }
}

TEST(SelectFinal, PicksHighestLikelihood) {
  ReconstructionSet r;
  r.target_class = 0;
  for (int64_t i = 0; i < 2; ++i) {
    Candidate c;
    c.index = i;
    c.final_likelihood = i == 0 ? 0.3 : 0.9;
    r.candidates.push_back(c);
  }
  auto s = select_final(r, 1);
  ASSERT_EQ(s.candidates.size(), 1U);
  EXPECT_EQ(s.candidates[0].index, 1);
}

TEST(SelectFinal, MatchesBruteForceSort) {
  auto gen = make_generator(1);
  for (int trial = 0; trial < 20; ++trial) {
    ReconstructionSet r;
    const int64_t n = 7;
    auto v = torch::randint(0, 4, {n}, gen).to(torch::kFloat64) / 4;  // plenty of ties
    for (int64_t i = 0; i < n; ++i) {
      Candidate c;
      c.index = i;
      c.final_likelihood = v[i].item<double>();
      r.candidates.push_back(c);
    }
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      const double la = r.candidates[a].final_likelihood;
      const double lb = r.candidates[b].final_likelihood;
      return la != lb ? la > lb : a < b;
    });
    for (int64_t k = 1; k <= n; ++k) {
      auto s = select_final(r, k);
      ASSERT_EQ(static_cast<int64_t>(s.candidates.size()), k);
      for (int64_t j = 0; j < k; ++j) {
        EXPECT_EQ(s.candidates[j].index, order[j]);
      }
    }
  }
}

TEST(Inversion, SaveLoadRoundTrip) {
  auto dir = std::filesystem::temp_directory_path() / "lokt_test_recons";
  std::filesystem::remove_all(dir);
  auto S = linear_surrogate(10);
  IdentityGenerator G(kDim);
  auto cfg = toy_conditional(1);
  cfg.steps = 5;
  auto sets = attack_all_classes(G, nullptr, *S, cfg);
  save_reconstructions(sets, dir);
  auto r = load_reconstructions(dir);
  ASSERT_EQ(r.size(), sets.size());
  for (size_t k = 0; k < r.size(); ++k) {
    EXPECT_TRUE(torch::equal(r[k].images(), sets[k].images()));
    for (size_t i = 0; i < r[k].candidates.size(); ++i) {
      EXPECT_NEAR(r[k].candidates[i].final_likelihood, sets[k].candidates[i].final_likelihood, 1e-12);
    }
  }
  std::filesystem::remove_all(dir);
}
