#include "lokt/losses.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace lokt;
namespace L = lokt::loss;

namespace {

torch::Tensor full(int64_t n, double v) { return torch::full({n}, v, torch::kFloat64); }

// Central differences of a scalar function w.r.t. every entry of x.
torch::Tensor numeric_grad(const std::function<double(const torch::Tensor&)>& f, torch::Tensor x,
                           double h = 1e-6) {
  auto g = torch::zeros_like(x);
  auto flat = x.view({-1});
  auto gf = g.view({-1});
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double v = flat[i].item<double>();
    flat[i] = v + h;
    const double up = f(x);
    flat[i] = v - h;
    const double down = f(x);
    flat[i] = v;
    gf[i] = (up - down) / (2 * h);
  }
  return g;
}

void expect_grad_close(const torch::Tensor& analytic, const torch::Tensor& numeric) {
  auto a = analytic.view({-1});
  auto n = numeric.view({-1});
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double av = a[i].item<double>();
    const double nv = n[i].item<double>();
    const double scale = std::max({std::abs(av), std::abs(nv), 1e-3});
    EXPECT_LE(std::abs(av - nv) / scale, 1e-4) << "entry " << i << ": " << av << " vs " << nv;
  }
}

struct Logits {
  torch::Tensor fake_src, real_src, fake_cls, real_cls, y;
};

Logits random_logits(uint64_t seed, int64_t b = 4, int64_t n = 3) {
  auto gen = make_generator(seed);
  auto opt = torch::TensorOptions().dtype(torch::kFloat64);
  return {torch::randn({b}, gen, opt), torch::randn({b}, gen, opt), torch::randn({b, n}, gen, opt),
          torch::randn({b, n}, gen, opt), torch::randint(0, n, {b}, gen, torch::kInt64)};
}

}  // namespace

TEST(AcganDcLoss, PerfectModelIsZero) {
  auto one = full(5, 1.0);
  EXPECT_NEAR(L::acgan_dc_loss(one, one, one, one).item<double>(), 0.0, 1e-12);
}

TEST(AcganDcLoss, UniformProbabilities) {
  auto half = full(8, 0.5);
  auto tenth = full(8, 0.1);
  const double expected = 2 * std::log(2.0) + 2 * std::log(10.0);
  EXPECT_NEAR(L::acgan_dc_loss(half, half, tenth, tenth).item<double>(), expected, 1e-6);
}

TEST(AcganGLoss, HalfSourceFullClass) {
  EXPECT_NEAR(L::acgan_g_loss(full(3, 0.5), full(3, 1.0)).item<double>(), std::log(0.5), 1e-6);
  EXPECT_NEAR(L::acgan_g_loss(full(3, 0.5), full(3, 1.0)).item<double>(), -0.6931, 1e-4);
}

TEST(AcganGLoss, BoundaryIsZero) {
  EXPECT_NEAR(L::acgan_g_loss(full(3, 1.0), full(3, 1.0)).item<double>(), 0.0, 1e-12);
}

TEST(AcganGLoss, MonotoneInFakeSourceProbability) {
  double prev = L::acgan_g_loss(full(2, 0.99), full(2, 0.7)).item<double>();
  for (double p = 0.9; p > 0.0; p -= 0.1) {
    const double cur = L::acgan_g_loss(full(2, p), full(2, 0.7)).item<double>();
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(TacganDcLoss, PerfectModelIsZero) {
  auto one = full(5, 1.0);
  EXPECT_NEAR(L::tacgan_dc_loss(one, one, one).item<double>(), 0.0, 1e-12);
}

TEST(TacganDcLoss, UniformProbabilitiesHaveOneClassTerm) {
  auto half = full(8, 0.5);
  const double expected = 2 * std::log(2.0) + std::log(10.0);
  EXPECT_NEAR(L::tacgan_dc_loss(half, half, full(8, 0.1)).item<double>(), expected, 1e-6);
}

TEST(TacganDcLoss, ZeroClassWeightIsUnconditionalLoss) {
  auto lg = random_logits(3);
  auto pf = L::p_fake(lg.fake_src);
  auto pr = L::p_real(lg.real_src);
  auto pc = L::p_class_at(lg.fake_cls, lg.y);
  EXPECT_DOUBLE_EQ(L::tacgan_dc_loss(pf, pr, pc, {1.0, 0.0}).item<double>(),
                   L::unconditional_d_loss(pf, pr).item<double>());
}

TEST(TacganDcLoss, DiffersFromAcganByRealClassTerm) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    auto lg = random_logits(seed);
    auto pf = L::p_fake(lg.fake_src);
    auto pr = L::p_real(lg.real_src);
    auto pcf = L::p_class_at(lg.fake_cls, lg.y);
    auto pcr = L::p_class_at(lg.real_cls, lg.y);
    for (double l2 : {1.0, 1.5}) {
      L::Weights w{1.0, l2};
      const double diff =
          (L::acgan_dc_loss(pf, pr, pcf, pcr, w) - L::tacgan_dc_loss(pf, pr, pcf, w)).item<double>();
      const double real_term = -l2 * pcr.log().mean().item<double>();
      EXPECT_NEAR(diff, real_term, 1e-6);
    }
  }
}

TEST(Losses, ClampedLogCountsClampedEntries) {
  int64_t clamped = 0;
  auto v = L::clamped_log(torch::tensor({0.0, 1e-12, 0.5}, torch::kFloat64), &clamped);
  EXPECT_EQ(clamped, 2);
  EXPECT_NEAR(v[0].item<double>(), std::log(L::kLogEpsilon), 1e-9);
  EXPECT_TRUE(torch::isfinite(v).all().item<bool>());
}

TEST(Losses, GradientsMatchCentralDifferences) {
  const L::Weights w{1.0, 1.5};
  for (uint64_t seed = 100; seed < 120; ++seed) {
    auto lg = random_logits(seed);
    std::vector<std::pair<const char*, std::function<torch::Tensor(const std::vector<torch::Tensor>&)>>>
        cases = {
            {"acgan_dc",
             [&](const std::vector<torch::Tensor>& v) {
               return L::acgan_dc_loss(L::p_fake(v[0]), L::p_real(v[1]), L::p_class_at(v[2], lg.y),
                                       L::p_class_at(v[3], lg.y), w);
             }},
            {"tacgan_dc",
             [&](const std::vector<torch::Tensor>& v) {
               return L::tacgan_dc_loss(L::p_fake(v[0]), L::p_real(v[1]), L::p_class_at(v[2], lg.y), w);
             }},
            {"acgan_g",
             [&](const std::vector<torch::Tensor>& v) {
               return L::acgan_g_loss(L::p_fake(v[0]), L::p_class_at(v[2], lg.y), w);
             }},
            {"acgan_g_nonsaturating", [&](const std::vector<torch::Tensor>& v) {
               return L::acgan_g_loss_nonsaturating(L::p_real(v[0]), L::p_class_at(v[2], lg.y), w);
             }}};
    for (auto& [name, fn] : cases) {
      std::vector<torch::Tensor> vars = {lg.fake_src.clone().requires_grad_(true),
                                         lg.real_src.clone().requires_grad_(true),
                                         lg.fake_cls.clone().requires_grad_(true),
                                         lg.real_cls.clone().requires_grad_(true)};
      auto loss = fn(vars);
      auto grads = torch::autograd::grad({loss}, vars, {}, false, false, true);
      for (size_t k = 0; k < vars.size(); ++k) {
        if (!grads[k].defined()) {
          continue;
        }
        SCOPED_TRACE(std::string(name) + " seed " + std::to_string(seed) + " var " + std::to_string(k));
        auto base = vars;
        for (auto& b : base) {
          b = b.detach().clone();
        }
        auto x = base[k];
        auto num = numeric_grad(
            [&](const torch::Tensor&) {
              torch::NoGradGuard ng;
              return fn(base).item<double>();
            },
            x);
        expect_grad_close(grads[k], num);
      }
    }
  }
}
