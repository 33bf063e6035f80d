#include "lokt/inversion.hpp"

#include "lokt/digest.hpp"
#include "lokt/oracle.hpp"
#include "lokt/plotting.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace lokt::inversion {
using nlohmann::json;

std::string to_string(Style s) {
  return s == Style::ConditionalAscent ? "conditional" : "prior_regularized";
}

Style style_from_string(const std::string& s) {
  if (s == "conditional") {
    return Style::ConditionalAscent;
  }
  if (s == "prior_regularized") {
    return Style::PriorRegularized;
  }
  throw ConfigError("unknown inversion style '" + s + "'");
}

void InversionConfig::validate() const {
  if (steps < 1) {
    throw ConfigError("inversion: steps must be >= 1");
  }
  if (!(step_size > 0)) {
    throw ConfigError("inversion: step_size must be positive");
  }
  if (prior_weight < 0) {
    throw ConfigError("inversion: prior_weight must be non-negative");
  }
  if (candidates_per_class < 1) {
    throw ConfigError("inversion: candidates_per_class must be >= 1");
  }
  if (optimizer != "adam" && optimizer != "sgd") {
    throw ConfigError("inversion: unknown optimizer '" + optimizer + "'");
  }
}

json InversionConfig::to_json() const {
  return {{"style", to_string(style)},
          {"steps", steps},
          {"step_size", step_size},
          {"prior_weight", prior_weight},
          {"candidates_per_class", candidates_per_class},
          {"optimizer", optimizer},
          {"momentum", momentum},
          {"radius_factor", radius_factor},
          {"seed", seed}};
}

InversionConfig InversionConfig::from_json(const json& j) {
  const auto style = style_from_string(j.value("style", std::string("conditional")));
  auto c = style == Style::ConditionalAscent ? conditional_defaults()
                                             : prior_defaults(j.value("prior_weight", 0.0));
  c.steps = j.value("steps", c.steps);
  c.step_size = j.value("step_size", c.step_size);
  c.candidates_per_class = j.value("candidates_per_class", c.candidates_per_class);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.momentum = j.value("momentum", c.momentum);
  c.radius_factor = j.value("radius_factor", c.radius_factor);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

InversionConfig InversionConfig::conditional_defaults() { return {}; }

InversionConfig InversionConfig::prior_defaults(double prior_weight) {
  InversionConfig c;
  c.style = Style::PriorRegularized;
  c.steps = 2400;
  c.step_size = 0.02;
  c.prior_weight = prior_weight;
  c.optimizer = "sgd";
  return c;
}

torch::Tensor ReconstructionSet::images() const {
  std::vector<torch::Tensor> xs;
  for (const auto& c : candidates) {
    xs.push_back(c.image);
  }
  return xs.empty() ? torch::empty({0}) : torch::stack(xs);
}

std::string ReconstructionSet::digest() const {
  Sha256 h;
  h.update(std::to_string(target_class));
  for (const auto& c : candidates) {
    h.update(std::to_string(c.index)).update(c.latent).update(c.image);
    for (double v : c.trajectory) {
      h.update(std::string_view(reinterpret_cast<const char*>(&v), sizeof v));
    }
  }
  return h.hex();
}

namespace {

ReconstructionSet ascend(nn::LatentGenerator& G, nn::SourceCritic* D,
                         surrogate::LikelihoodModel& S, int64_t y, const InversionConfig& cfg,
                         bool conditional) {
  cfg.validate();
  if (y < 0 || y >= S.num_classes()) {
    throw ConfigError("inversion target class out of range");
  }
  oracle::AttackPhaseScope attack_phase;
  const auto n = cfg.candidates_per_class;
  const auto dz = G.latent_dim();
  const double radius = cfg.radius_factor * std::sqrt(static_cast<double>(dz));

  std::vector<torch::Tensor> init;
  for (int64_t i = 0; i < n; ++i) {
    auto gen = make_generator(derive_seed(cfg.seed, static_cast<uint64_t>(y), static_cast<uint64_t>(i)));
    init.push_back(torch::randn({dz}, gen));
  }
  auto z = torch::stack(init).requires_grad_(true);
  const auto target = torch::full({n}, y, torch::kInt64);
  const auto gen_label = conditional ? target : torch::zeros({n}, torch::kInt64);
  const bool use_prior = !conditional && cfg.prior_weight > 0.0;
  if (use_prior && D == nullptr) {
    throw ConfigError("prior-regularized inversion needs a critic");
  }

  std::unique_ptr<torch::optim::Optimizer> opt;
  if (cfg.optimizer == "adam") {
    opt = std::make_unique<torch::optim::Adam>(std::vector<torch::Tensor>{z},
                                               torch::optim::AdamOptions(cfg.step_size));
  } else {
    opt = std::make_unique<torch::optim::SGD>(
        std::vector<torch::Tensor>{z}, torch::optim::SGDOptions(cfg.step_size).momentum(cfg.momentum));
  }

  ReconstructionSet out;
  out.target_class = y;
  out.candidates.resize(static_cast<size_t>(n));
  auto alive = torch::ones({n}, torch::kBool);

  auto objective = [&](torch::Tensor& loglik) {
    auto x = G.generate(z, gen_label);
    loglik = S.log_probs(x).gather(1, target.view({-1, 1})).squeeze(1);
    auto per = -loglik;
    if (use_prior) {
      per = per - cfg.prior_weight * D->realness(x);
    }
    return per;
  };

  for (int64_t step = 0; step <= cfg.steps; ++step) {
    torch::Tensor loglik;
    auto per = objective(loglik);
    auto ll = loglik.detach().to(torch::kFloat64);
    auto per_d = per.detach();
    auto finite = torch::isfinite(per_d) & torch::isfinite(ll);
    auto ll_acc = ll.accessor<double, 1>();
    auto fin_acc = finite.accessor<bool, 1>();
    auto alive_acc = alive.accessor<bool, 1>();
    for (int64_t i = 0; i < n; ++i) {
      auto& c = out.candidates[static_cast<size_t>(i)];
      if (!alive_acc[i]) {
        c.trajectory.push_back(c.trajectory.back());
        continue;
      }
      if (!fin_acc[i]) {
        // The latent keeps its last finite value from here on.
        c.aborted = true;
        alive_acc[i] = false;
        c.trajectory.push_back(c.trajectory.empty() ? std::nan("") : c.trajectory.back());
        continue;
      }
      c.trajectory.push_back(std::exp(ll_acc[i]));
    }
    if (step == cfg.steps) {
      break;
    }
    auto keep = alive.to(per.dtype());
    auto loss = torch::where(alive, per, torch::zeros_like(per)).sum();
    opt->zero_grad();
    loss.backward();
    auto before = z.detach().clone();
    z.mutable_grad().mul_(keep.view({-1, 1}));
    opt->step();
    {
      torch::NoGradGuard ng;
      z.copy_(torch::where(alive.view({-1, 1}), z, before));
      auto norms = z.norm(2, 1, true);
      auto scale = torch::clamp_max(radius / norms.clamp_min(1e-12), 1.0);
      z.mul_(scale);
    }
  }

  torch::NoGradGuard ng;
  auto x = G.generate(z.detach(), gen_label);
  auto final_ll = S.log_probs(x).gather(1, target.view({-1, 1})).squeeze(1).to(torch::kFloat64);
  for (int64_t i = 0; i < n; ++i) {
    auto& c = out.candidates[static_cast<size_t>(i)];
    c.index = i;
    c.latent = z[i].detach().clone();
    c.image = x[i].detach().clone();
    c.final_likelihood = std::exp(final_ll[i].item<double>());
  }
  return out;
}

}  // namespace

ReconstructionSet invert_conditional(nn::LatentGenerator& G, surrogate::LikelihoodModel& S,
                                     int64_t y, const InversionConfig& cfg) {
  return ascend(G, nullptr, S, y, cfg, true);
}

ReconstructionSet invert_prior_regularized(nn::LatentGenerator& G, nn::SourceCritic& D,
                                           surrogate::LikelihoodModel& S, int64_t y,
                                           const InversionConfig& cfg) {
  return ascend(G, &D, S, y, cfg, false);
}

std::vector<ReconstructionSet> attack_all_classes(nn::LatentGenerator& G, nn::SourceCritic* D,
                                                  surrogate::LikelihoodModel& S,
                                                  const InversionConfig& cfg) {
  std::vector<ReconstructionSet> out;
  for (int64_t y = 0; y < S.num_classes(); ++y) {
    if (cfg.style == Style::ConditionalAscent) {
      out.push_back(invert_conditional(G, S, y, cfg));
    } else {
      if (D == nullptr && cfg.prior_weight > 0) {
        throw ConfigError("prior-regularized attack needs a critic");
      }
      out.push_back(ascend(G, D, S, y, cfg, false));
    }
  }
  return out;
}

ReconstructionSet select_final(const ReconstructionSet& recons, int64_t n) {
  if (n < 0 || n > static_cast<int64_t>(recons.candidates.size())) {
    throw ConfigError("select_final: n exceeds the number of candidates");
  }
  std::vector<size_t> order(recons.candidates.size());
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](size_t i) {
    const double v = recons.candidates[i].final_likelihood;
    return std::isnan(v) ? -1.0 : v;
  };
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const double ka = key(a);
    const double kb = key(b);
    if (ka != kb) {
      return ka > kb;
    }
    return recons.candidates[a].index < recons.candidates[b].index;
  });
  ReconstructionSet out;
  out.target_class = recons.target_class;
  for (int64_t i = 0; i < n; ++i) {
    out.candidates.push_back(recons.candidates[order[static_cast<size_t>(i)]]);
  }
  return out;
}

void save_reconstructions(const std::vector<ReconstructionSet>& sets,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream traj(dir / "trajectories.csv");
  traj << "class,candidate,step,likelihood\n";
  traj.precision(10);
  json index = json::array();
  for (const auto& s : sets) {
    std::vector<torch::Tensor> z;
    std::vector<torch::Tensor> x;
    json cands = json::array();
    for (const auto& c : s.candidates) {
      z.push_back(c.latent);
      x.push_back(c.image);
      cands.push_back({{"index", c.index},
                       {"final_likelihood", c.final_likelihood},
                       {"aborted", c.aborted}});
      for (size_t t = 0; t < c.trajectory.size(); ++t) {
        traj << s.target_class << "," << c.index << "," << t << "," << c.trajectory[t] << "\n";
      }
    }
    const auto stem = "class_" + std::to_string(s.target_class);
    torch::save(std::vector<torch::Tensor>{torch::stack(z), torch::stack(x)},
                (dir / (stem + ".pt")).string());
    plot::save_image_grid(torch::stack(x), dir / (stem + ".png"),
                          static_cast<int64_t>(x.size()));
    index.push_back({{"class", s.target_class}, {"candidates", cands}, {"digest", s.digest()}});
  }
  std::ofstream(dir / "reconstructions.json") << index.dump(2) << "\n";
}

std::vector<ReconstructionSet> load_reconstructions(const std::filesystem::path& dir) {
  std::ifstream in(dir / "reconstructions.json");
  if (!in) {
    throw PrerequisiteError("missing reconstructions " + (dir / "reconstructions.json").string());
  }
  auto index = json::parse(in);
  std::map<std::pair<int64_t, int64_t>, std::vector<double>> trajs;
  {
    std::ifstream t(dir / "trajectories.csv");
    std::string line;
    std::getline(t, line);
    while (std::getline(t, line)) {
      std::stringstream ss(line);
      std::string a, b, c, d;
      std::getline(ss, a, ',');
      std::getline(ss, b, ',');
      std::getline(ss, c, ',');
      std::getline(ss, d, ',');
      trajs[{std::stoll(a), std::stoll(b)}].push_back(std::stod(d));
    }
  }
  std::vector<ReconstructionSet> out;
  for (const auto& e : index) {
    ReconstructionSet s;
    s.target_class = e.at("class");
    std::vector<torch::Tensor> zx;
    torch::load(zx, (dir / ("class_" + std::to_string(s.target_class) + ".pt")).string());
    int64_t k = 0;
    for (const auto& c : e.at("candidates")) {
      Candidate cand;
      cand.index = c.at("index");
      cand.final_likelihood = c.at("final_likelihood");
      cand.aborted = c.at("aborted");
      cand.latent = zx[0][k];
      cand.image = zx[1][k];
      cand.trajectory = trajs[{s.target_class, cand.index}];
      s.candidates.push_back(std::move(cand));
      ++k;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace lokt::inversion
