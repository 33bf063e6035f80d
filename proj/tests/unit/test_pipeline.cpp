#include "lokt/pipeline.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace lokt;
using namespace lokt::pipeline;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json tiny_config() {
  return json::parse(R"({
    "name": "tiny",
    "output_dir": "runs/tiny",
    "seed": 3,
    "dataset": {"private": "glyph-digits",
                "split": {"private_per_class": 12, "holdout_per_class": 4,
                          "public_dataset": "glyph-letters", "public_size": 100}},
    "target": {"architecture": "cnn-t", "train": {"epochs": 1}},
    "evaluation": {"architecture": "cnn-e", "train": {"epochs": 1}},
    "tacgan": {"iterations": 3, "batch_size": 16, "latent_dim": 8, "hidden": 32, "blocks": 1},
    "prior_gan": {"iterations": 2, "batch_size": 16, "latent_dim": 8, "hidden": 32, "blocks": 1},
    "surrogates": {"per_class": 10, "architectures": ["densenet-s", "densenet-m"],
                   "primary": "densenet-m", "train": {"epochs": 2}},
    "baselines": [
      {"kind": "direct_i", "classifier": {"epochs": 1},
       "gan": {"latent_dim": 8, "hidden": 32, "blocks": 1}},
      {"kind": "acgan_ii", "augmentation": {},
       "gan": {"iterations": 2, "batch_size": 16, "latent_dim": 8, "hidden": 32, "blocks": 1}}
    ],
    "attacks": {"conditional": {"steps": 4, "candidates_per_class": 2},
                "prior": {"steps": 4, "candidates_per_class": 2, "prior_weight": 0.1},
                "seeds": [0, 1], "select": 1},
    "analysis": {"num_samples": 200, "threshold": 0.9, "rho": 0.7}
  })");
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("lokt_pipeline_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

RunOptions quiet_at(const fs::path& root) {
  RunOptions o;
  o.verbose = false;
  o.output_root = root;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(ExperimentConfig, DigestIgnoresFieldOrder) {
  auto a = ExperimentConfig::from_json(tiny_config());
  auto b = ExperimentConfig::from_json(json::parse(R"({
    "analysis": {"rho": 0.7, "threshold": 0.9, "num_samples": 200},
    "attacks": {"select": 1, "seeds": [0, 1],
                "prior": {"prior_weight": 0.1, "candidates_per_class": 2, "steps": 4},
                "conditional": {"candidates_per_class": 2, "steps": 4}},
    "baselines": [
      {"gan": {"blocks": 1, "hidden": 32, "latent_dim": 8}, "classifier": {"epochs": 1},
       "kind": "direct_i"},
      {"gan": {"blocks": 1, "hidden": 32, "latent_dim": 8, "batch_size": 16, "iterations": 2},
       "augmentation": {}, "kind": "acgan_ii"}
    ],
    "surrogates": {"train": {"epochs": 2}, "primary": "densenet-m",
                   "architectures": ["densenet-s", "densenet-m"], "per_class": 10},
    "prior_gan": {"blocks": 1, "hidden": 32, "latent_dim": 8, "batch_size": 16, "iterations": 2},
    "tacgan": {"blocks": 1, "hidden": 32, "latent_dim": 8, "batch_size": 16, "iterations": 3},
    "evaluation": {"train": {"epochs": 1}, "architecture": "cnn-e"},
    "target": {"train": {"epochs": 1}, "architecture": "cnn-t"},
    "dataset": {"split": {"public_size": 100, "public_dataset": "glyph-letters",
                          "holdout_per_class": 4, "private_per_class": 12},
                "private": "glyph-digits"},
    "seed": 3, "output_dir": "runs/tiny", "name": "tiny"
  })"));
  EXPECT_EQ(a.digest(), b.digest());
  auto c_json = tiny_config();
  c_json["seed"] = 4;
  EXPECT_NE(ExperimentConfig::from_json(c_json).digest(), a.digest());
}

TEST(ExperimentConfig, DigestIgnoresHowTheConfigPathIsSpelled) {
  auto dir = scratch("paths");
  fs::create_directories(dir / "configs");
  std::ofstream(dir / "configs" / "c.json") << tiny_config().dump();
  const auto absolute = load_config(dir / "configs" / "c.json");
  const auto cwd = fs::current_path();
  fs::current_path(dir);
  const auto relative = load_config("configs/../configs/c.json");
  fs::current_path(cwd);
  EXPECT_EQ(absolute.digest(), relative.digest());
  EXPECT_EQ(absolute.output_dir, relative.output_dir);
  auto moved = tiny_config();
  moved["output_dir"] = "elsewhere";
  EXPECT_EQ(ExperimentConfig::from_json(moved).digest(), absolute.digest());
}

TEST(ExperimentConfig, RejectsUnregisteredArchitecturesAndUnknownKeys) {
  auto j = tiny_config();
  j["target"]["architecture"] = "resnet-9000";
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
  j = tiny_config();
  j["evaluation"]["architecture"] = "cnn-t";
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
  j = tiny_config();
  j["surprise"] = 1;
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
  j = tiny_config();
  j["surrogates"]["primary"] = "densenet-l";
  EXPECT_THROW(ExperimentConfig::from_json(j), ConfigError);
}

TEST(Pipeline, AttackBeforeSurrogateNamesTheSurrogateCheckpoint) {
  auto root = scratch("prereq");
  Pipeline p(ExperimentConfig::from_json(tiny_config()), quiet_at(root));
  try {
    p.run(Stage::Attack);
    FAIL() << "expected a prerequisite error";
  } catch (const PrerequisiteError& e) {
    EXPECT_NE(std::string(e.what()).find("surrogate checkpoint"), std::string::npos) << e.what();
  }
  EXPECT_THROW(p.run(Stage::TrainTarget), PrerequisiteError);
}

TEST(Pipeline, OutputDirectoryIsLocked) {
  auto root = scratch("lock");
  auto cfg = ExperimentConfig::from_json(tiny_config());
  {
    Pipeline a(cfg, quiet_at(root));
    EXPECT_THROW(Pipeline(cfg, quiet_at(root)), Error);
  }
  EXPECT_NO_THROW(Pipeline(cfg, quiet_at(root)));
}

TEST(Pipeline, OutputRootEnvironmentOverride) {
  auto root = scratch("env");
  ::setenv(kOutputRootEnv, root.c_str(), 1);
  RunOptions o;
  o.verbose = false;
  {
    Pipeline p(ExperimentConfig::from_json(tiny_config()), o);
    EXPECT_EQ(p.output_dir(), root / "tiny");
  }
  ::unsetenv(kOutputRootEnv);
}

TEST(Pipeline, ConfigDigestMismatchRequiresOverwrite) {
  auto root = scratch("digest");
  {
    Pipeline p(ExperimentConfig::from_json(tiny_config()), quiet_at(root));
    p.run(Stage::PrepareData);
  }
  auto changed = tiny_config();
  changed["seed"] = 99;
  {
    Pipeline p(ExperimentConfig::from_json(changed), quiet_at(root));
    EXPECT_THROW(p.run(Stage::PrepareData), ConfigError);
  }
  auto opts = quiet_at(root);
  opts.overwrite = true;
  Pipeline p(ExperimentConfig::from_json(changed), opts);
  EXPECT_NO_THROW(p.run(Stage::PrepareData));
  auto m = json::parse(slurp(p.output_dir() / "data" / "stage_manifest.json"));
  EXPECT_EQ(m.at("config_digest"), p.config_digest());
  EXPECT_EQ(m.at("seed"), 99);
}

TEST(Pipeline, TinyEndToEndIsReproducible) {
  std::string digests[2];
  std::string results[2];
  for (int run = 0; run < 2; ++run) {
    auto root = scratch("e2e" + std::to_string(run));
    Pipeline p(ExperimentConfig::from_json(tiny_config()), quiet_at(root));
    p.run_all();
    const auto out = p.output_dir();
    for (auto s : all_stages()) {
      auto m = json::parse(slurp(out / stage_subdir(s) / "stage_manifest.json"));
      EXPECT_EQ(m.at("config_digest"), p.config_digest()) << to_string(s);
      EXPECT_EQ(m.at("seed"), 3);
    }
    auto l = p.ledger();
    EXPECT_EQ(l.at(oracle::QueryPhase::TacganTraining), 3 * 5 * 16);
    EXPECT_EQ(l.at(oracle::QueryPhase::SyntheticLabeling), 10 * 10);
    EXPECT_EQ(l.at(oracle::QueryPhase::PublicRelabeling), 2 * 100);
    EXPECT_EQ(l.total, 240 + 100 + 200);
    auto report = json::parse(slurp(out / "report" / "report.json"));
    digests[run] = report.at("report_digest");
    results[run] = slurp(out / "report" / "results.csv");
    EXPECT_EQ(results[run].substr(0, results[run].find('\n')),
              "setup,attack,surrogate_design,attack_acc_mean,attack_acc_std,knn_mean,queries_total");
    EXPECT_TRUE(fs::exists(out / "report" / "queries.csv"));
    EXPECT_TRUE(fs::exists(out / "tacgan" / "gamma.csv"));
    EXPECT_TRUE(fs::exists(out / "tacgan" / "gamma.png"));
    EXPECT_TRUE(fs::exists(out / "analysis" / "p1_histogram.png"));
    EXPECT_TRUE(fs::exists(out / "analysis" / "dynamics.csv"));
  }
  EXPECT_EQ(digests[0], digests[1]);
  EXPECT_EQ(results[0], results[1]);
}

TEST(Pipeline, ReportRefusesMixedDigests) {
  auto root = scratch("mixed");
  auto opts = quiet_at(root);
  {
    Pipeline p(ExperimentConfig::from_json(tiny_config()), opts);
    p.run_all();
  }
  auto changed = tiny_config();
  changed["name"] = "tiny";
  changed["analysis"]["rho"] = 0.6;
  Pipeline p(ExperimentConfig::from_json(changed), opts);
  EXPECT_THROW(p.run(Stage::Report), ConfigError);
}
