#include "lokt/tacgan.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace lokt::gan {
using nlohmann::json;

void GanTrainConfig::validate() const {
  if (iterations < 1 || batch_size < 1 || d_steps < 1) {
    throw ConfigError("GAN config: iterations, batch_size and d_steps must be positive");
  }
  if (lambda1 < 0 || lambda2 < 0) {
    throw ConfigError("GAN config: lambda weights must be non-negative");
  }
  if (lr_g <= 0 || lr_d <= 0) {
    throw ConfigError("GAN config: learning rates must be positive");
  }
}

json GanTrainConfig::to_json() const {
  return {{"iterations", iterations},
          {"batch_size", batch_size},
          {"d_steps", d_steps},
          {"lambda1", lambda1},
          {"lambda2", lambda2},
          {"lr_g", lr_g},
          {"lr_d", lr_d},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adversarial", adversarial == AdversarialLoss::Hinge ? "hinge" : "cross_entropy"},
          {"g_objective", g_objective == GeneratorObjective::Minimax ? "minimax" : "non_saturating"},
          {"latent_dim", arch.latent_dim},
          {"hidden", arch.hidden},
          {"blocks", arch.blocks},
          {"seed", seed}};
}

GanTrainConfig GanTrainConfig::from_json(const json& j) {
  GanTrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.d_steps = j.value("d_steps", c.d_steps);
  c.lambda1 = j.value("lambda1", c.lambda1);
  c.lambda2 = j.value("lambda2", c.lambda2);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  const auto adv = j.value("adversarial", std::string("cross_entropy"));
  if (adv == "hinge") {
    c.adversarial = AdversarialLoss::Hinge;
  } else if (adv != "cross_entropy") {
    throw ConfigError("unknown adversarial loss '" + adv + "'");
  }
  const auto gobj = j.value("g_objective", std::string("non_saturating"));
  if (gobj == "minimax") {
    c.g_objective = GeneratorObjective::Minimax;
  } else if (gobj != "non_saturating") {
    throw ConfigError("unknown generator objective '" + gobj + "'");
  }
  c.arch.latent_dim = j.value("latent_dim", c.arch.latent_dim);
  c.arch.hidden = j.value("hidden", c.arch.hidden);
  c.arch.blocks = j.value("blocks", c.arch.blocks);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double GammaTrace::mean(size_t begin, size_t end) const {
  end = std::min(end, values.size());
  if (begin >= end) {
    return 0.0;
  }
  return std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(begin),
                         values.begin() + static_cast<std::ptrdiff_t>(end), 0.0) /
         static_cast<double>(end - begin);
}

void GammaTrace::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << "iteration,gamma\n";
  out.precision(17);
  for (size_t i = 0; i < values.size(); ++i) {
    out << i << "," << values[i] << "\n";
  }
}

GammaTrace GammaTrace::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw PrerequisiteError("missing gamma trace " + path.string());
  }
  GammaTrace g;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    auto comma = line.find(',');
    if (comma != std::string::npos) {
      g.values.push_back(std::stod(line.substr(comma + 1)));
    }
  }
  return g;
}

double track_gamma(const torch::Tensor& y, const torch::Tensor& ytilde) {
  if (y.numel() == 0) {
    throw DataError("track_gamma: empty batch");
  }
  if (y.numel() != ytilde.numel()) {
    throw DataError("track_gamma: label lists differ in length");
  }
  return y.flatten().eq(ytilde.flatten()).to(torch::kFloat64).mean().item<double>();
}

json TrainStats::to_json() const {
  return {{"final_d_loss", d_loss.empty() ? 0.0 : d_loss.back()},
          {"final_g_loss", g_loss.empty() ? 0.0 : g_loss.back()},
          {"clamped_logs", clamped_logs},
          {"seconds", seconds}};
}

namespace {

enum class Mode { TargetAssisted, Standard, Unconditional };

void check_finite(const torch::Tensor& loss, const char* which, int64_t iteration) {
  if (!std::isfinite(loss.item<double>())) {
    throw DivergenceError(std::string(which) + " loss became non-finite at iteration " +
                          std::to_string(iteration));
  }
}

GanResult run(Mode mode, const torch::Tensor& real_images, const torch::Tensor& real_labels,
              int64_t num_classes, oracle::HardLabelOracle* oracle, const GanTrainConfig& cfg,
              TrainingObserver* observer) {
  cfg.validate();
  if (real_images.size(0) == 0) {
    throw DataError("GAN training needs a non-empty real/public set");
  }
  const auto t0 = std::chrono::steady_clock::now();
  const ImageShape shape{real_images.size(2), real_images.size(3), real_images.size(1)};
  torch::manual_seed(cfg.seed);
  auto G = std::make_shared<nn::Generator>(num_classes, shape, cfg.arch);
  auto D = std::make_shared<nn::Discriminator>(num_classes, shape, cfg.arch);
  torch::optim::Adam opt_g(G->parameters(),
                           torch::optim::AdamOptions(cfg.lr_g).betas({cfg.beta1, cfg.beta2}));
  torch::optim::Adam opt_d(D->parameters(),
                           torch::optim::AdamOptions(cfg.lr_d).betas({cfg.beta1, cfg.beta2}));
  auto gen = make_generator(derive_seed(cfg.seed, 0x6a4));
  const loss::Weights w{cfg.lambda1, cfg.lambda2};
  const auto B = cfg.batch_size;
  const auto dz = cfg.arch.latent_dim;
  const bool hinge = cfg.adversarial == AdversarialLoss::Hinge;
  const auto n_real = real_images.size(0);

  GanResult res;
  res.generator = G;
  res.discriminator = D;
  G->train();
  D->train();
  for (int64_t it = 0; it < cfg.iterations; ++it) {
    double gamma_sum = 0.0;
    torch::Tensor d_loss;
    for (int64_t step = 0; step < cfg.d_steps; ++step) {
      auto z = torch::randn({B, dz}, gen);
      auto y = torch::randint(num_classes, {B}, gen, torch::kInt64);
      torch::Tensor x_fake;
      {
        torch::NoGradGuard ng;
        x_fake = G->forward(z, y);
      }
      auto idx = torch::randint(n_real, {B}, gen, torch::kInt64);
      auto x_real = real_images.index_select(0, idx);
      auto fake = D->forward(x_fake);
      auto real = D->forward(x_real);

      torch::Tensor src_term;
      if (hinge) {
        src_term = cfg.lambda1 * loss::hinge_d_loss(fake.source_logit, real.source_logit);
      }
      switch (mode) {
        case Mode::TargetAssisted: {
          if (observer != nullptr) {
            observer->on_fake_batch(y);
          }
          auto ytilde = oracle->query(x_fake, oracle::QueryPhase::TacganTraining);
          if (observer != nullptr) {
            observer->on_labels(it, step, y, ytilde);
          }
          gamma_sum += track_gamma(y, ytilde);
          auto pc = loss::p_class_at(fake.class_logits, ytilde);
          if (hinge) {
            d_loss = src_term - cfg.lambda2 * loss::clamped_log(pc, &res.stats.clamped_logs).mean();
          } else {
            d_loss = loss::tacgan_dc_loss(loss::p_fake(fake.source_logit),
                                          loss::p_real(real.source_logit), pc, w,
                                          &res.stats.clamped_logs);
          }
          break;
        }
        case Mode::Standard: {
          auto y_real = real_labels.index_select(0, idx);
          auto pcf = loss::p_class_at(fake.class_logits, y);
          auto pcr = loss::p_class_at(real.class_logits, y_real);
          if (hinge) {
            d_loss = src_term - cfg.lambda2 * (loss::clamped_log(pcf, &res.stats.clamped_logs).mean() +
                                               loss::clamped_log(pcr, &res.stats.clamped_logs).mean());
          } else {
            d_loss = loss::acgan_dc_loss(loss::p_fake(fake.source_logit),
                                         loss::p_real(real.source_logit), pcf, pcr, w,
                                         &res.stats.clamped_logs);
          }
          break;
        }
        case Mode::Unconditional:
          d_loss = hinge ? src_term
                         : loss::unconditional_d_loss(loss::p_fake(fake.source_logit),
                                                      loss::p_real(real.source_logit),
                                                      &res.stats.clamped_logs);
          break;
      }
      check_finite(d_loss, "discriminator", it);
      opt_d.zero_grad();
      d_loss.backward();
      opt_d.step();
    }

    // Generator step; the class term uses the conditioning label y.
    auto z = torch::randn({B, dz}, gen);
    auto y = torch::randint(num_classes, {B}, gen, torch::kInt64);
    auto fake = D->forward(G->forward(z, y));
    torch::Tensor g_loss;
    const double l2 = mode == Mode::Unconditional ? 0.0 : cfg.lambda2;
    const loss::Weights gw{cfg.lambda1, l2};
    auto pc = loss::p_class_at(fake.class_logits, y);
    if (hinge) {
      g_loss = cfg.lambda1 * loss::hinge_g_loss(fake.source_logit) -
               l2 * loss::clamped_log(pc, &res.stats.clamped_logs).mean();
    } else if (cfg.g_objective == GeneratorObjective::Minimax) {
      g_loss = loss::acgan_g_loss(loss::p_fake(fake.source_logit), pc, gw, &res.stats.clamped_logs);
    } else {
      g_loss = loss::acgan_g_loss_nonsaturating(loss::p_real(fake.source_logit), pc, gw,
                                                &res.stats.clamped_logs);
    }
    check_finite(g_loss, "generator", it);
    opt_g.zero_grad();
    g_loss.backward();
    opt_g.step();

    if (mode == Mode::TargetAssisted) {
      res.gamma.values.push_back(gamma_sum / static_cast<double>(cfg.d_steps));
    }
    res.stats.d_loss.push_back(d_loss.item<double>());
    res.stats.g_loss.push_back(g_loss.item<double>());
    if (observer != nullptr) {
      observer->on_iteration(it, res.stats.d_loss.back(), res.stats.g_loss.back());
    }
  }
  D->set_trained_iterations(cfg.iterations);
  G->eval();
  D->eval();
  res.stats.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace

GanResult train_tacgan(const torch::Tensor& public_images, oracle::HardLabelOracle& oracle,
                       const GanTrainConfig& cfg, TrainingObserver* observer) {
  return run(Mode::TargetAssisted, public_images, {}, oracle.num_classes(), &oracle, cfg, observer);
}

GanResult train_tacgan(const data::DatasetSplit& split, oracle::HardLabelOracle& oracle,
                       const GanTrainConfig& cfg, TrainingObserver* observer) {
  if (oracle.num_classes() != split.num_private_classes) {
    throw ConfigError("oracle class count differs from the split");
  }
  return train_tacgan(split.public_images, oracle, cfg, observer);
}

GanResult train_acgan(const data::PseudoLabeledDataset& ds, const GanTrainConfig& cfg,
                      TrainingObserver* observer) {
  return run(Mode::Standard, ds.images, ds.labels, ds.num_classes, nullptr, cfg, observer);
}

GanResult train_unconditional_gan(const torch::Tensor& images, const GanTrainConfig& cfg,
                                  TrainingObserver* observer) {
  return run(Mode::Unconditional, images, {}, 1, nullptr, cfg, observer);
}

void save_gan(const GanResult& r, const std::filesystem::path& dir, const json& metadata) {
  std::filesystem::create_directories(dir);
  nn::save_module(*r.generator, dir / "generator.pt");
  nn::save_module(*r.discriminator, dir / "discriminator.pt");
  r.gamma.save_csv(dir / "gamma.csv");
  json m = metadata.is_object() ? metadata : json::object();
  const auto& s = r.generator->image_shape();
  const auto& a = r.generator->architecture();
  m["num_classes"] = r.generator->num_classes();
  m["image_shape"] = {s.height, s.width, s.channels};
  m["latent_dim"] = a.latent_dim;
  m["hidden"] = a.hidden;
  m["blocks"] = a.blocks;
  m["iteration"] = r.discriminator->trained_iterations();
  m["gamma_at_save"] = r.gamma.values.empty() ? json(nullptr) : json(r.gamma.values.back());
  m["stats"] = r.stats.to_json();
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

GanResult load_gan(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw PrerequisiteError("missing GAN manifest " + (dir / "manifest.json").string());
  }
  auto m = json::parse(in);
  auto s = m.at("image_shape").get<std::vector<int64_t>>();
  const ImageShape shape{s[0], s[1], s[2]};
  nn::GanArchitecture a{m.at("latent_dim"), m.at("hidden"), m.at("blocks")};
  const auto n = m.at("num_classes").get<int64_t>();
  GanResult r;
  r.generator = std::make_shared<nn::Generator>(n, shape, a);
  r.discriminator = std::make_shared<nn::Discriminator>(n, shape, a);
  nn::load_module(*r.generator, dir / "generator.pt");
  nn::load_module(*r.discriminator, dir / "discriminator.pt");
  r.generator->eval();
  r.discriminator->eval();
  if (std::filesystem::exists(dir / "gamma.csv")) {
    r.gamma = GammaTrace::load_csv(dir / "gamma.csv");
  }
  return r;
}

}  // namespace lokt::gan
