#include "lokt/pipeline.hpp"

#include "lokt/analysis.hpp"
#include "lokt/digest.hpp"
#include "lokt/plotting.hpp"
#include "lokt/surrogate.hpp"

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace lokt::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::pair<Stage, const char*>> kStageNames = {
    {Stage::PrepareData, "prepare-data"},     {Stage::TrainTarget, "train-target"},
    {Stage::TrainTacgan, "train-tacgan"},     {Stage::TrainSurrogate, "train-surrogate"},
    {Stage::RunBaseline, "run-baseline"},     {Stage::Attack, "attack"},
    {Stage::Evaluate, "evaluate"},            {Stage::Analyze, "analyze"},
    {Stage::Report, "report"}};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) {
    throw PrerequisiteError("missing artifact " + p.string());
  }
  return json::parse(in);
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2) << "\n";
}

// Sub-seed for a component, mixing the global seed, a fixed tag and the
// component's own configured seed.
uint64_t seed_for(uint64_t global, uint64_t tag, uint64_t component) {
  return derive_seed(global, tag, component);
}

std::string design_label(const std::string& key) {
  static const std::map<std::string, std::string> names = {
      {"cd", "C∘D"},           {"s", "S"},
      {"s_en", "S_en"},        {"tacgan_cd", "T-ACGAN (C∘D)"},
      {"direct_i", "Direct I"}, {"direct_ii", "Direct II"},
      {"acgan_i", "ACGAN I"},  {"acgan_ii", "ACGAN II"}};
  auto it = names.find(key);
  return it == names.end() ? key : it->second;
}

std::string fmt2(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

}  // namespace

std::string to_string(Stage s) {
  for (const auto& [st, name] : kStageNames) {
    if (st == s) {
      return name;
    }
  }
  return "unknown";
}

Stage stage_from_string(const std::string& s) {
  for (const auto& [st, name] : kStageNames) {
    if (s == name) {
      return st;
    }
  }
  throw ConfigError("unknown stage '" + s + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages = [] {
    std::vector<Stage> v;
    for (const auto& [st, _] : kStageNames) {
      v.push_back(st);
    }
    return v;
  }();
  return stages;
}

fs::path stage_subdir(Stage s) {
  switch (s) {
    case Stage::PrepareData:
      return "data";
    case Stage::TrainTarget:
      return "target";
    case Stage::TrainTacgan:
      return "tacgan";
    case Stage::TrainSurrogate:
      return "surrogates";
    case Stage::RunBaseline:
      return "baselines";
    case Stage::Attack:
      return "attacks";
    case Stage::Evaluate:
      return "metrics";
    case Stage::Analyze:
      return "analysis";
    case Stage::Report:
      return "report";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  for (const auto& a : {target_architecture, eval_architecture}) {
    if (!nn::is_registered_architecture(a)) {
      throw ConfigError("unregistered architecture '" + a + "'");
    }
  }
  if (target_architecture == eval_architecture) {
    throw ConfigError("evaluation architecture must differ from the target architecture");
  }
  if (surrogates.architectures.size() < 2) {
    throw ConfigError("surrogates.architectures needs at least two entries for the ensemble");
  }
  std::set<std::string> seen;
  for (const auto& a : surrogates.architectures) {
    if (!nn::is_registered_architecture(a)) {
      throw ConfigError("unregistered surrogate architecture '" + a + "'");
    }
    if (!seen.insert(a).second) {
      throw ConfigError("duplicate surrogate architecture '" + a + "'");
    }
  }
  if (!seen.count(surrogates.primary)) {
    throw ConfigError("surrogates.primary must be one of surrogates.architectures");
  }
  if (surrogates.per_class < 1) {
    throw ConfigError("surrogates.per_class must be >= 1");
  }
  tacgan.validate();
  prior_gan.validate();
  attacks.conditional.validate();
  attacks.prior.validate();
  if (attacks.conditional.style != inversion::Style::ConditionalAscent ||
      attacks.prior.style != inversion::Style::PriorRegularized) {
    throw ConfigError("attacks.conditional / attacks.prior have the wrong style");
  }
  if (attacks.seeds.empty()) {
    throw ConfigError("attacks.seeds must not be empty");
  }
  if (attacks.select < 1 || attacks.select > attacks.conditional.candidates_per_class ||
      attacks.select > attacks.prior.candidates_per_class) {
    throw ConfigError("attacks.select must lie in [1, candidates_per_class]");
  }
  std::set<baselines::Kind> kinds;
  for (const auto& b : baselines) {
    b.validate();
    if (!kinds.insert(b.kind).second) {
      throw ConfigError("baseline " + baselines::to_string(b.kind) + " listed twice");
    }
  }
  if (!(analysis.threshold > 0 && analysis.threshold < 1) ||
      !(analysis.rho > 0 && analysis.rho < 1) || analysis.num_samples < 1) {
    throw ConfigError("invalid analysis settings");
  }
}

json ExperimentConfig::to_json() const {
  json b = json::array();
  for (const auto& s : baselines) {
    b.push_back(s.to_json());
  }
  json seeds = attacks.seeds;
  return {
      {"name", name},
      {"output_dir", output_dir.string()},
      {"seed", seed},
      {"dataset",
       {{"registry", registry.string()}, {"private", private_dataset}, {"split", split.to_json()}}},
      {"target", {{"architecture", target_architecture}, {"train", target_train.to_json()}}},
      {"evaluation", {{"architecture", eval_architecture}, {"train", eval_train.to_json()}}},
      {"tacgan", tacgan.to_json()},
      {"prior_gan", prior_gan.to_json()},
      {"surrogates",
       {{"per_class", surrogates.per_class},
        {"architectures", surrogates.architectures},
        {"primary", surrogates.primary},
        {"train", surrogates.train.to_json()}}},
      {"baselines", b},
      {"attacks",
       {{"conditional", attacks.conditional.to_json()},
        {"prior", attacks.prior.to_json()},
        {"seeds", seeds},
        {"select", attacks.select}}},
      {"analysis",
       {{"enabled", analysis.enabled},
        {"threshold", analysis.threshold},
        {"num_samples", analysis.num_samples},
        {"rho", analysis.rho}}}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  static const std::set<std::string> known = {"name",     "output_dir", "seed",       "dataset",
                                              "target",   "evaluation", "tacgan",     "prior_gan",
                                              "surrogates", "baselines", "attacks",   "analysis"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) {
      throw ConfigError("unknown config key '" + k + "'");
    }
  }
  ExperimentConfig c;
  c.name = j.value("name", c.name);
  c.output_dir = j.value("output_dir", c.output_dir.string());
  c.seed = j.value("seed", c.seed);
  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    c.registry = d.value("registry", std::string());
    c.private_dataset = d.value("private", c.private_dataset);
    if (d.contains("split")) {
      c.split = data::SplitPolicy::from_json(d.at("split"));
    }
  }
  if (j.contains("target")) {
    c.target_architecture = j.at("target").value("architecture", c.target_architecture);
    if (j.at("target").contains("train")) {
      c.target_train = oracle::TrainConfig::from_json(j.at("target").at("train"));
    }
  }
  if (j.contains("evaluation")) {
    c.eval_architecture = j.at("evaluation").value("architecture", c.eval_architecture);
    if (j.at("evaluation").contains("train")) {
      c.eval_train = oracle::TrainConfig::from_json(j.at("evaluation").at("train"));
    }
  }
  if (j.contains("tacgan")) {
    c.tacgan = gan::GanTrainConfig::from_json(j.at("tacgan"));
  }
  if (j.contains("prior_gan")) {
    c.prior_gan = gan::GanTrainConfig::from_json(j.at("prior_gan"));
  }
  if (j.contains("surrogates")) {
    const auto& s = j.at("surrogates");
    c.surrogates.per_class = s.value("per_class", c.surrogates.per_class);
    c.surrogates.architectures = s.value("architectures", c.surrogates.architectures);
    c.surrogates.primary = s.value("primary", c.surrogates.primary);
    if (s.contains("train")) {
      c.surrogates.train = oracle::TrainConfig::from_json(s.at("train"));
    }
  }
  if (j.contains("baselines")) {
    for (const auto& b : j.at("baselines")) {
      c.baselines.push_back(baselines::BaselineSpec::from_json(b));
    }
  }
  c.attacks.conditional = inversion::InversionConfig::conditional_defaults();
  c.attacks.prior = inversion::InversionConfig::prior_defaults(0.1);
  if (j.contains("attacks")) {
    const auto& a = j.at("attacks");
    if (a.contains("conditional")) {
      auto cj = a.at("conditional");
      cj["style"] = "conditional";
      c.attacks.conditional = inversion::InversionConfig::from_json(cj);
    }
    if (a.contains("prior")) {
      auto pj = a.at("prior");
      pj["style"] = "prior_regularized";
      c.attacks.prior = inversion::InversionConfig::from_json(pj);
    }
    c.attacks.seeds = a.value("seeds", c.attacks.seeds);
    c.attacks.select = a.value("select", c.attacks.select);
  }
  if (j.contains("analysis")) {
    const auto& a = j.at("analysis");
    c.analysis.enabled = a.value("enabled", c.analysis.enabled);
    c.analysis.threshold = a.value("threshold", c.analysis.threshold);
    c.analysis.num_samples = a.value("num_samples", c.analysis.num_samples);
    c.analysis.rho = a.value("rho", c.analysis.rho);
  }
  c.validate();
  c.raw = c.to_json();
  return c;
}

std::string ExperimentConfig::digest() const {
  // Where the outputs live is not part of the experiment's identity.
  auto j = to_json();
  j.erase("output_dir");
  return sha256_hex(j.dump());
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config " + path.string());
  }
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  auto cfg = ExperimentConfig::from_json(j);
  const auto base = path.parent_path();
  if (!cfg.registry.empty() && cfg.registry.is_relative()) {
    cfg.registry = fs::weakly_canonical(fs::absolute(base / cfg.registry));
  }
  if (cfg.output_dir.is_relative()) {
    cfg.output_dir = fs::weakly_canonical(fs::absolute(base / cfg.output_dir));
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Pipeline

Pipeline::Pipeline(ExperimentConfig cfg, RunOptions opts) : cfg_(std::move(cfg)), opts_(std::move(opts)) {
  if (opts_.seed) {
    cfg_.seed = *opts_.seed;
  }
  cfg_.validate();
  digest_ = cfg_.digest();
  std::optional<fs::path> root = opts_.output_root;
  if (!root) {
    if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') {
      root = fs::path(env);
    }
  }
  out_ = root ? *root / cfg_.output_dir.filename() : cfg_.output_dir;
  fs::create_directories(out_);
  lock_path_ = out_ / ".lock";
  for (int attempt = 0; attempt < 2; ++attempt) {
    int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd >= 0) {
      auto pid = std::to_string(::getpid());
      (void)!::write(fd, pid.data(), pid.size());
      ::close(fd);
      return;
    }
    // Reclaim a lock left behind by a process that no longer exists.
    std::ifstream in(lock_path_);
    long pid = 0;
    in >> pid;
    if (pid > 0 && ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH) {
      fs::remove(lock_path_);
      continue;
    }
    break;
  }
  throw Error("output directory " + out_.string() + " is locked by another stage process (" +
              lock_path_.string() + ")");
}

Pipeline::~Pipeline() {
  std::error_code ec;
  fs::remove(lock_path_, ec);
}

void Pipeline::log(const std::string& msg) const {
  if (opts_.verbose) {
    std::cerr << "[lokt] " << msg << std::endl;
  }
}

fs::path Pipeline::stage_dir(Stage s) const { return out_ / stage_subdir(s); }

void Pipeline::require(Stage prerequisite, const std::string& artifact) const {
  const auto manifest = stage_dir(prerequisite) / "stage_manifest.json";
  if (!fs::exists(manifest)) {
    throw PrerequisiteError("missing " + artifact + " (" + (stage_dir(prerequisite)).string() +
                            "); run stage '" + to_string(prerequisite) + "' first");
  }
  const auto m = read_json(manifest);
  if (m.value("config_digest", std::string()) != digest_ && !opts_.overwrite) {
    throw ConfigError("artifact " + artifact + " was produced with config digest " +
                      m.value("config_digest", std::string("?")) + ", current digest is " +
                      digest_ + "; rerun that stage or pass --overwrite to mix them");
  }
}

void Pipeline::begin_stage(Stage s) {
  const auto dir = stage_dir(s);
  const auto manifest = dir / "stage_manifest.json";
  if (fs::exists(manifest)) {
    const auto m = read_json(manifest);
    const auto old = m.value("config_digest", std::string());
    if (old != digest_) {
      if (!opts_.overwrite) {
        throw ConfigError("stage '" + to_string(s) + "' artifacts in " + dir.string() +
                          " were produced with config digest " + old +
                          "; pass --overwrite to replace them");
      }
      log("warning: replacing artifacts of stage '" + to_string(s) + "' from config digest " + old);
    }
  }
  if (fs::exists(dir)) {
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
  log("stage " + to_string(s) + " -> " + dir.string());
}

void Pipeline::finish_stage(Stage s, const json& artifacts, const oracle::QueryLedger& delta) {
  write_json(stage_dir(s) / "stage_manifest.json", {{"stage", to_string(s)},
                                                   {"config_digest", digest_},
                                                   {"seed", cfg_.seed},
                                                   {"artifacts", artifacts},
                                                   {"ledger_delta", delta.to_json()}});
  const auto ledger_path = out_ / "ledger.json";
  json l = fs::exists(ledger_path) ? read_json(ledger_path) : json{{"stages", json::object()}};
  l["stages"][to_string(s)] = delta.to_json();
  oracle::QueryLedger total;
  for (const auto& [_, v] : l["stages"].items()) {
    auto q = oracle::QueryLedger::from_json(v);
    for (size_t i = 0; i < total.phases.size(); ++i) {
      total.phases[i] += q.phases[i];
    }
    total.total += q.total;
  }
  l["total"] = total.to_json();
  write_json(ledger_path, l);
}

oracle::QueryLedger Pipeline::ledger() const {
  const auto p = out_ / "ledger.json";
  if (!fs::exists(p)) {
    return {};
  }
  return oracle::QueryLedger::from_json(read_json(p).at("total"));
}

void Pipeline::run_all() {
  for (auto s : all_stages()) {
    run(s);
  }
}

void Pipeline::run(Stage stage) {
  if (opts_.resume) {
    const auto m = stage_dir(stage) / "stage_manifest.json";
    if (fs::exists(m) && read_json(m).value("config_digest", std::string()) == digest_) {
      log("stage " + to_string(stage) + " is up to date");
      return;
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  switch (stage) {
    case Stage::PrepareData:
      prepare_data();
      break;
    case Stage::TrainTarget:
      train_target();
      break;
    case Stage::TrainTacgan:
      train_tacgan();
      break;
    case Stage::TrainSurrogate:
      train_surrogate();
      break;
    case Stage::RunBaseline:
      run_baselines();
      break;
    case Stage::Attack:
      attack();
      break;
    case Stage::Evaluate:
      evaluate();
      break;
    case Stage::Analyze:
      analyze();
      break;
    case Stage::Report:
      report();
      break;
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log("stage " + to_string(stage) + " done in " + fmt2(secs) + " s");
}

namespace {

struct OracleBundle {
  oracle::TargetModel target;
  std::shared_ptr<oracle::ClassifierBackend> backend;
  std::unique_ptr<oracle::HardLabelOracle> oracle;
};

OracleBundle make_oracle(const fs::path& target_dir, const data::DatasetSplit& split) {
  OracleBundle b;
  b.target = oracle::load_target(target_dir);
  b.backend = std::make_shared<oracle::ClassifierBackend>(b.target.net);
  b.oracle = std::make_unique<oracle::HardLabelOracle>(b.backend, split.pixel_range);
  return b;
}

}  // namespace

void Pipeline::prepare_data() {
  begin_stage(Stage::PrepareData);
  auto registry = cfg_.registry.empty() ? data::DatasetRegistry::builtin()
                                        : data::DatasetRegistry::from_file(cfg_.registry);
  auto policy = cfg_.split;
  policy.seed = seed_for(cfg_.seed, 1, cfg_.split.seed);
  auto split = data::load_and_split(registry, cfg_.private_dataset, policy);
  const auto dir = stage_dir(Stage::PrepareData);
  data::save_split(split, dir, {{"policy", policy.to_json()}, {"dataset", cfg_.private_dataset}});
  plot::save_image_grid(split.private_images.slice(0, 0, split.private_images.size(0),
                                                   std::max<int64_t>(1, split.private_images.size(0) / 40)),
                        dir / "private_preview.png", 20);
  plot::save_image_grid(split.public_images.slice(0, 0, std::min<int64_t>(40, split.public_images.size(0))),
                        dir / "public_preview.png", 20);
  finish_stage(Stage::PrepareData,
               {{"split_digest", split.digest()},
                {"num_private_classes", split.num_private_classes},
                {"private_size", split.private_images.size(0)},
                {"holdout_size", split.holdout_images.size(0)},
                {"public_size", split.public_images.size(0)}},
               {});
}

void Pipeline::train_target() {
  require(Stage::PrepareData, "dataset split");
  auto split = data::load_split(stage_dir(Stage::PrepareData));
  begin_stage(Stage::TrainTarget);
  const auto dir = stage_dir(Stage::TrainTarget);
  auto tcfg = cfg_.target_train;
  tcfg.seed = seed_for(cfg_.seed, 2, tcfg.seed);
  auto target = oracle::train_target(split.private_images, split.private_labels, split.holdout_images,
                                     split.holdout_labels, split.num_private_classes,
                                     cfg_.target_architecture, tcfg);
  oracle::save_target(target, dir / "target");
  log("target val accuracy " + fmt2(target.manifest.at("val_accuracy").get<double>()));
  auto ecfg = cfg_.eval_train;
  ecfg.seed = seed_for(cfg_.seed, 3, ecfg.seed);
  auto E = eval::train_eval_model(split.private_images, split.private_labels, split.holdout_images,
                                  split.holdout_labels, split.num_private_classes,
                                  cfg_.eval_architecture, cfg_.target_architecture, ecfg);
  eval::save_eval_model(E, dir / "eval_model");
  log("evaluation model val accuracy " + fmt2(E.manifest.at("val_accuracy").get<double>()));
  finish_stage(Stage::TrainTarget,
               {{"target", target.manifest}, {"evaluation_model", E.manifest}}, {});
}

void Pipeline::train_tacgan() {
  require(Stage::PrepareData, "dataset split");
  require(Stage::TrainTarget, "target checkpoint");
  auto split = data::load_split(stage_dir(Stage::PrepareData));
  auto ob = make_oracle(stage_dir(Stage::TrainTarget) / "target", split);
  begin_stage(Stage::TrainTacgan);
  const auto dir = stage_dir(Stage::TrainTacgan);
  auto gcfg = cfg_.tacgan;
  gcfg.seed = seed_for(cfg_.seed, 4, gcfg.seed);

  struct Progress : gan::TrainingObserver {
    const Pipeline* p;
    int64_t total;
    const gan::GammaTrace* gamma = nullptr;
    explicit Progress(const Pipeline* pp, int64_t t) : p(pp), total(t) {}
    void on_iteration(int64_t it, double d, double g) override {
      if ((it + 1) % std::max<int64_t>(1, total / 10) == 0) {
        std::ostringstream s;
        s << "tacgan iteration " << it + 1 << "/" << total << " d_loss " << fmt2(d) << " g_loss "
          << fmt2(g);
        p->log(s.str());
      }
    }
  } progress(this, gcfg.iterations);

  auto res = gan::train_tacgan(split, *ob.oracle, gcfg, &progress);
  const auto ledger = ob.oracle->ledger_report();
  const auto n = res.gamma.values.size();
  const auto w = std::max<size_t>(1, n / 20);
  const double first = res.gamma.mean(0, w);
  const double last = res.gamma.mean(n - w, n);
  log("gamma first 5% " + fmt2(first) + ", last 5% " + fmt2(last));
  gan::save_gan(res, dir, {{"config_digest", digest_}, {"seed", gcfg.seed}, {"config", gcfg.to_json()}});

  std::vector<double> xs(n);
  std::iota(xs.begin(), xs.end(), 0.0);
  plot::save_line_plot({{"gamma", xs, res.gamma.values}}, "gamma per iteration", dir / "gamma.png");
  plot::save_line_plot({{"D loss", xs, res.stats.d_loss}, {"G loss", xs, res.stats.g_loss}},
                       "T-ACGAN training losses", dir / "losses.png");
  {
    torch::NoGradGuard ng;
    auto gen = make_generator(seed_for(cfg_.seed, 40, 0));
    const auto N = split.num_private_classes;
    auto y = torch::arange(N, torch::kInt64).repeat({8});
    auto x = res.generator->forward(torch::randn({8 * N, res.generator->latent_dim()}, gen), y);
    plot::save_image_grid(x, dir / "samples.png", N);
  }
  finish_stage(Stage::TrainTacgan,
               {{"gamma_first_5pct", first},
                {"gamma_last_5pct", last},
                {"iterations", gcfg.iterations},
                {"stats", res.stats.to_json()}},
               ledger);
}

void Pipeline::train_surrogate() {
  require(Stage::PrepareData, "dataset split");
  require(Stage::TrainTarget, "target checkpoint");
  require(Stage::TrainTacgan, "T-ACGAN checkpoint");
  auto split = data::load_split(stage_dir(Stage::PrepareData));
  auto ob = make_oracle(stage_dir(Stage::TrainTarget) / "target", split);
  auto tg = gan::load_gan(stage_dir(Stage::TrainTacgan));
  begin_stage(Stage::TrainSurrogate);
  const auto dir = stage_dir(Stage::TrainSurrogate);

  auto fake = surrogate::generate_fake_dataset(*tg.generator, *ob.oracle, cfg_.surrogates.per_class,
                                               seed_for(cfg_.seed, 5, 0),
                                               dir / "fake_progress.json");
  const auto ledger = ob.oracle->ledger_report();
  data::save_pseudo_labeled(fake, dir, "fake", {{"per_class", cfg_.surrogates.per_class}});

  auto cd = surrogate::extract_cd(tg.discriminator);
  surrogate::save_surrogate(*cd, dir / "cd");

  json trained = json::object();
  for (const auto& arch : cfg_.surrogates.architectures) {
    auto tc = cfg_.surrogates.train;
    tc.seed = seed_for(cfg_.seed, 6, derive_seed(tc.seed, std::hash<std::string>{}(arch)));
    std::vector<surrogate::Checkpoint> cks;
    const bool primary = arch == cfg_.surrogates.primary;
    auto s = surrogate::train_surrogate(fake, arch, tc, primary ? &cks : nullptr);
    surrogate::save_surrogate(*s, dir / arch);
    for (const auto& ck : cks) {
      surrogate::save_surrogate(*ck.model, dir / arch / "checkpoints" / ("epoch_" + std::to_string(ck.epoch)));
    }
    log("surrogate " + arch + " pseudo-label train accuracy " +
        fmt2(s->manifest().at("pseudo_label_train_accuracy").get<double>()));
    trained[arch] = s->manifest();
  }
  if (ob.oracle->ledger_report() != ledger) {
    throw Error("surrogate training touched the oracle");
  }
  finish_stage(Stage::TrainSurrogate,
               {{"fake_histogram", fake.class_histogram},
                {"fake_size", fake.size()},
                {"surrogates", trained},
                {"primary", cfg_.surrogates.primary}},
               ledger);
}

void Pipeline::run_baselines() {
  require(Stage::PrepareData, "dataset split");
  require(Stage::TrainTarget, "target checkpoint");
  auto split = data::load_split(stage_dir(Stage::PrepareData));
  const auto target_dir = stage_dir(Stage::TrainTarget) / "target";
  begin_stage(Stage::RunBaseline);
  const auto dir = stage_dir(Stage::RunBaseline);
  oracle::QueryLedger total;
  json per = json::object();
  for (const auto& spec0 : cfg_.baselines) {
    auto spec = spec0;
    const auto tag = 7 + static_cast<uint64_t>(spec.kind);
    spec.gan.seed = seed_for(cfg_.seed, tag, spec.gan.seed);
    spec.classifier.seed = seed_for(cfg_.seed, tag + 100, spec.classifier.seed);
    if (spec.augmentation) {
      spec.augmentation->seed = seed_for(cfg_.seed, tag + 200, spec.augmentation->seed);
    }
    auto ob = make_oracle(target_dir, split);
    const auto name = baselines::to_string(spec.kind);
    log("baseline " + name);
    auto res = baselines::run_baseline(spec, split, *ob.oracle);
    const auto ledger = ob.oracle->ledger_report();
    for (size_t i = 0; i < total.phases.size(); ++i) {
      total.phases[i] += ledger.phases[i];
    }
    total.total += ledger.total;
    surrogate::save_surrogate(*res.surrogate, dir / name / "surrogate");
    if (res.gan) {
      gan::save_gan(*res.gan, dir / name / "gan", {{"config_digest", digest_}});
    }
    per[name] = {{"queries", ledger.to_json()},
                 {"histogram_before", res.coverage.histogram_before},
                 {"histogram_after", res.coverage.histogram_after},
                 {"empty_classes", res.coverage.empty_classes},
                 {"cv_before", data::coefficient_of_variation(res.coverage.histogram_before)},
                 {"cv_after", data::coefficient_of_variation(res.coverage.histogram_after)},
                 {"training_size", res.training_data.size()}};
    write_json(dir / name / "coverage.json", per[name]);
  }
  finish_stage(Stage::RunBaseline, {{"baselines", per}}, total);
}

void Pipeline::attack() {
  require(Stage::TrainSurrogate, "surrogate checkpoint (" +
                                     (stage_dir(Stage::TrainSurrogate) / cfg_.surrogates.primary).string() + ")");
  require(Stage::TrainTacgan, "T-ACGAN checkpoint");
  require(Stage::PrepareData, "dataset split");
  if (!cfg_.baselines.empty()) {
    require(Stage::RunBaseline, "baseline surrogates");
  }
  const auto ledger_before = ledger();
  auto split = data::load_split(stage_dir(Stage::PrepareData));
  begin_stage(Stage::Attack);
  const auto dir = stage_dir(Stage::Attack);
  oracle::AttackPhaseScope attack_phase;

  auto tg = gan::load_gan(stage_dir(Stage::TrainTacgan));
  const auto sdir = stage_dir(Stage::TrainSurrogate);
  auto cd = surrogate::load_surrogate(sdir / "cd");
  std::vector<std::shared_ptr<surrogate::SurrogateModel>> members;
  std::shared_ptr<surrogate::SurrogateModel> primary;
  for (const auto& arch : cfg_.surrogates.architectures) {
    auto s = surrogate::load_surrogate(sdir / arch);
    if (arch == cfg_.surrogates.primary) {
      primary = s;
    }
    members.push_back(s);
  }
  auto ensemble = surrogate::build_ensemble(members);

  // Shared image prior of the prior-regularized attack: an unconditional GAN
  // on the unlabeled public images, independent of every surrogate.
  auto pcfg = cfg_.prior_gan;
  pcfg.seed = seed_for(cfg_.seed, 20, pcfg.seed);
  log("training the shared attack prior");
  auto prior = gan::train_unconditional_gan(split.public_images, pcfg);
  gan::save_gan(prior, dir / "prior_gan", {{"config_digest", digest_}});

  json runs = json::array();
  auto run_one = [&](const std::string& attack_name, const std::string& design,
                     surrogate::LikelihoodModel& S, nn::LatentGenerator& G, nn::SourceCritic* D,
                     const inversion::InversionConfig& base) {
    for (size_t k = 0; k < cfg_.attacks.seeds.size(); ++k) {
      auto icfg = base;
      icfg.seed = seed_for(cfg_.seed, 30, derive_seed(base.seed, cfg_.attacks.seeds[k]));
      auto sets = inversion::attack_all_classes(G, D, S, icfg);
      const auto out = dir / attack_name / design / ("seed_" + std::to_string(cfg_.attacks.seeds[k]));
      inversion::save_reconstructions(sets, out);
      runs.push_back({{"attack", attack_name}, {"design", design}, {"seed", cfg_.attacks.seeds[k]},
                      {"dir", fs::relative(out, out_).string()}});
    }
    log("attack " + attack_name + " on " + design + " done");
  };

  run_one("conditional", "cd", *cd, *tg.generator, nullptr, cfg_.attacks.conditional);
  run_one("conditional", "s", *primary, *tg.generator, nullptr, cfg_.attacks.conditional);
  run_one("conditional", "s_en", ensemble, *tg.generator, nullptr, cfg_.attacks.conditional);
  for (const auto& b : cfg_.baselines) {
    const auto name = baselines::to_string(b.kind);
    auto s = surrogate::load_surrogate(stage_dir(Stage::RunBaseline) / name / "surrogate");
    run_one("prior_regularized", name, *s, *prior.generator, prior.discriminator.get(),
            cfg_.attacks.prior);
  }
  run_one("prior_regularized", "tacgan_cd", *cd, *prior.generator, prior.discriminator.get(),
          cfg_.attacks.prior);

  if (ledger() != ledger_before) {
    throw Error("the attack stage changed the query ledger");
  }
  finish_stage(Stage::Attack, {{"runs", runs}}, {});
}

void Pipeline::evaluate() {
  require(Stage::PrepareData, "dataset split");
  require(Stage::TrainTarget, "evaluation model");
  require(Stage::Attack, "attack reconstructions");
  auto split = data::load_split(stage_dir(Stage::PrepareData));
  auto E = eval::load_eval_model(stage_dir(Stage::TrainTarget) / "eval_model");
  const auto runs = read_json(stage_dir(Stage::Attack) / "stage_manifest.json").at("artifacts").at("runs");
  const auto ledger_json = read_json(out_ / "ledger.json").at("stages");
  auto stage_total = [&](Stage s) -> int64_t {
    auto key = to_string(s);
    return ledger_json.contains(key) ? ledger_json.at(key).at("total").get<int64_t>() : 0;
  };
  json baseline_queries = json::object();
  if (!cfg_.baselines.empty()) {
    baseline_queries = read_json(stage_dir(Stage::RunBaseline) / "stage_manifest.json")
                           .at("artifacts")
                           .at("baselines");
  }
  begin_stage(Stage::Evaluate);
  const auto dir = stage_dir(Stage::Evaluate);

  std::map<std::pair<std::string, std::string>, std::vector<std::string>> grouped;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : runs) {
    auto key = std::make_pair(r.at("attack").get<std::string>(), r.at("design").get<std::string>());
    if (!grouped.count(key)) {
      order.push_back(key);
    }
    grouped[key].push_back(r.at("dir"));
  }
  eval::MetricReport report;
  for (const auto& key : order) {
    std::vector<eval::AccuracyFragment> acc;
    std::vector<eval::KnnFragment> knn;
    for (const auto& d : grouped[key]) {
      auto sets = inversion::load_reconstructions(out_ / d);
      std::vector<inversion::ReconstructionSet> selected;
      for (const auto& s : sets) {
        selected.push_back(inversion::select_final(s, cfg_.attacks.select));
      }
      acc.push_back(eval::attack_accuracy(selected, E, split.num_private_classes));
      knn.push_back(eval::knn_distance(sets, split.private_images, split.private_labels, E));
    }
    const auto& design = key.second;
    int64_t queries = 0;
    if (design == "cd" || design == "tacgan_cd") {
      queries = stage_total(Stage::TrainTacgan);
    } else if (design == "s" || design == "s_en") {
      queries = stage_total(Stage::TrainTacgan) + stage_total(Stage::TrainSurrogate);
    } else if (baseline_queries.contains(design)) {
      queries = baseline_queries.at(design).at("queries").at("total").get<int64_t>();
    }
    auto row = eval::aggregate(cfg_.name, key.first, design, acc, knn, queries);
    row.metadata = {{"label", design_label(design)}, {"seeds", grouped[key].size()}};
    log("metric " + key.first + "/" + design + ": acc " + fmt2(row.attack_acc_mean) + " ± " +
        fmt2(row.attack_acc_std) + ", knn " + fmt2(row.knn_mean));
    report.rows.push_back(std::move(row));
  }
  report.save(dir / "metrics.csv", dir / "metrics.json");
  finish_stage(Stage::Evaluate, {{"rows", report.rows.size()}}, {});
}

void Pipeline::analyze() {
  require(Stage::PrepareData, "dataset split");
  require(Stage::TrainTarget, "target checkpoint");
  require(Stage::TrainTacgan, "T-ACGAN checkpoint");
  require(Stage::TrainSurrogate, "surrogate checkpoints");
  auto split = data::load_split(stage_dir(Stage::PrepareData));
  auto target = oracle::load_target(stage_dir(Stage::TrainTarget) / "target");
  auto E = eval::load_eval_model(stage_dir(Stage::TrainTarget) / "eval_model");
  auto tg = gan::load_gan(stage_dir(Stage::TrainTacgan));
  const auto sdir = stage_dir(Stage::TrainSurrogate);
  auto S = surrogate::load_surrogate(sdir / cfg_.surrogates.primary);
  begin_stage(Stage::Analyze);
  const auto dir = stage_dir(Stage::Analyze);
  const auto ledger_before = ledger();

  oracle::ExperimenterProbe probe(std::make_shared<oracle::ClassifierBackend>(target.net),
                                  oracle::ExperimenterProbe::grant());

  // Property P1 on fresh generator samples, labeled by the target's argmax.
  const auto N = split.num_private_classes;
  const auto n = cfg_.analysis.num_samples;
  torch::Tensor x;
  {
    torch::NoGradGuard ng;
    auto gen = make_generator(seed_for(cfg_.seed, 50, 0));
    auto y = torch::arange(n, torch::kInt64).remainder(N);
    auto z = torch::randn({n, tg.generator->latent_dim()}, gen);
    std::vector<torch::Tensor> xs;
    for (int64_t i = 0; i < n; i += 1000) {
      xs.push_back(tg.generator->forward(z.slice(0, i, std::min(n, i + 1000)),
                                         y.slice(0, i, std::min(n, i + 1000))));
    }
    x = torch::cat(xs);
  }
  auto ytilde = oracle::argmax_lowest(probe.probabilities(x));
  auto records = analysis::likelihood_records(x, ytilde, *S, probe);
  auto p1 = analysis::conditional_pt_histogram(records, cfg_.analysis.threshold);
  auto p1_half = analysis::conditional_pt_histogram(records, 0.5);
  p1.save_csv(dir / "p1_histogram.csv");
  std::vector<std::string> bins;
  for (int b = 0; b < 10; ++b) {
    bins.push_back(fmt2(b / 10.0).substr(0, 3));
  }
  auto to_frac = [](const std::vector<int64_t>& h) {
    double s = 0;
    for (auto v : h) {
      s += static_cast<double>(v);
    }
    std::vector<double> out;
    for (auto v : h) {
      out.push_back(s > 0 ? static_cast<double>(v) / s : 0.0);
    }
    return out;
  };
  plot::save_bar_plot(bins,
                      {{"P_S > " + fmt2(cfg_.analysis.threshold), {}, to_frac(p1.conditional)},
                       {"all samples", {}, to_frac(p1.unconditional)}},
                      "P_T of generated samples", dir / "p1_histogram.png");

  // Easy/hard learning dynamics on the synthetic training set of S.
  auto fake = data::load_pseudo_labeled(sdir, "fake");
  auto emb = E.features(fake.images);
  auto split_eh = analysis::easy_hard_split(emb, fake.labels, cfg_.analysis.rho);
  std::vector<surrogate::Checkpoint> cks;
  const auto ck_root = sdir / cfg_.surrogates.primary / "checkpoints";
  for (int64_t e = 0;; ++e) {
    const auto p = ck_root / ("epoch_" + std::to_string(e));
    if (!fs::exists(p)) {
      break;
    }
    cks.push_back({e, surrogate::load_surrogate(p)});
  }
  json dyn_json = nullptr;
  if (cks.size() >= 2) {
    auto dyn = analysis::track_ps_dynamics(fake.images, fake.labels, cks, probe);
    auto summary = analysis::summarize_dynamics(dyn, split_eh);
    summary.save_csv(dir / "dynamics.csv");
    std::vector<double> ep;
    for (auto e : summary.epochs) {
      ep.push_back(static_cast<double>(e));
    }
    plot::save_line_plot({{"easy", ep, summary.easy_mean_ps}, {"hard", ep, summary.hard_mean_ps}},
                         "mean P_S during training of S", dir / "dynamics.png");
    const auto mid = summary.epochs.size() / 2;
    dyn_json = summary.to_json();
    dyn_json["mid_index"] = mid;
    dyn_json["mid_epoch"] = summary.epochs[mid];
    dyn_json["mid_easy_mean_ps"] = summary.easy_mean_ps[mid];
    dyn_json["mid_hard_mean_ps"] = summary.hard_mean_ps[mid];
    std::ofstream rec(dir / "dynamics_records.csv");
    rec << "epoch,sample_id,label,easy,p_s,p_t\n";
    for (const auto& recs : dyn) {
      for (const auto& r : recs) {
        rec << r.epoch << "," << r.sample_id << "," << r.label << ","
            << (split_eh.easy[static_cast<size_t>(r.sample_id)] ? 1 : 0) << "," << r.p_s << ","
            << r.p_t << "\n";
      }
    }
  }
  if (ledger() != ledger_before) {
    throw Error("analysis changed the query ledger");
  }
  json result = {{"p1", p1.to_json()},
                 {"p1_threshold_0_5", p1_half.to_json()},
                 {"p1_note",
                  "P1 summary statistics (median conditional P_T, share with P_T < 0.1) are an "
                  "operationalization of a qualitative claim"},
                 {"embedder", "evaluation model penultimate features (" + cfg_.eval_architecture + ")"},
                 {"dynamics", dyn_json}};
  write_json(dir / "analysis.json", result);
  finish_stage(Stage::Analyze, result, {});
}

void Pipeline::report() {
  require(Stage::Evaluate, "metrics");
  const bool have_analysis = fs::exists(stage_dir(Stage::Analyze) / "stage_manifest.json");
  if (have_analysis) {
    require(Stage::Analyze, "analysis");
  }
  // Every stage artifact must come from the same config unless overridden.
  for (auto s : all_stages()) {
    if (s == Stage::Report) {
      continue;
    }
    const auto m = stage_dir(s) / "stage_manifest.json";
    if (fs::exists(m) && read_json(m).value("config_digest", std::string()) != digest_ &&
        !opts_.overwrite) {
      throw ConfigError("stage '" + to_string(s) +
                        "' artifacts come from a different config; pass --overwrite to mix them");
    }
  }
  auto metrics = eval::MetricReport::from_json(read_json(stage_dir(Stage::Evaluate) / "metrics.json"));
  const auto ledger_json = read_json(out_ / "ledger.json");
  json analysis_json = have_analysis ? read_json(stage_dir(Stage::Analyze) / "analysis.json") : json(nullptr);
  begin_stage(Stage::Report);
  const auto dir = stage_dir(Stage::Report);

  std::ostringstream results;
  results << "setup,attack,surrogate_design,attack_acc_mean,attack_acc_std,knn_mean,queries_total\n";
  for (const auto& r : metrics.rows) {
    results << r.setup << "," << r.attack << "," << r.metadata.value("label", r.surrogate_design) << ","
            << fmt2(r.attack_acc_mean) << "," << fmt2(r.attack_acc_std) << "," << fmt2(r.knn_mean)
            << "," << r.queries_total << "\n";
  }
  std::ofstream(dir / "results.csv") << results.str();

  const auto& st = ledger_json.at("stages");
  auto phase = [&](const std::string& stage, const std::string& ph) -> int64_t {
    return st.contains(stage) ? st.at(stage).value(ph, int64_t{0}) : 0;
  };
  std::ostringstream queries;
  queries << "pipeline,tacgan_training,synthetic_labeling,public_relabeling,other,total\n";
  const auto tac = phase("train-tacgan", "tacgan_training");
  const auto syn = phase("train-surrogate", "synthetic_labeling");
  queries << "C∘D," << tac << ",0,0,0," << tac << "\n";
  queries << "S / S_en," << tac << "," << syn << ",0,0," << tac + syn << "\n";
  for (const auto& r : metrics.rows) {
    if (r.attack == "prior_regularized" && r.surrogate_design != "tacgan_cd") {
      queries << r.metadata.value("label", r.surrogate_design) << ",0,0," << r.queries_total << ",0,"
              << r.queries_total << "\n";
    }
  }
  std::ofstream(dir / "queries.csv") << queries.str();

  std::vector<std::string> labels;
  std::vector<double> accs;
  for (const auto& r : metrics.rows) {
    labels.push_back(r.metadata.value("label", r.surrogate_design));
    accs.push_back(r.attack_acc_mean);
  }
  plot::save_bar_plot(labels, {{"attack acc %", {}, accs}}, "attack accuracy", dir / "attack_accuracy.png");

  std::ostringstream md;
  md << "# " << cfg_.name << "\n\nconfig digest `" << digest_ << "`, seed " << cfg_.seed << "\n\n";
  md << "| attack | surrogate | attack acc ↑ | KNN dist ↓ | queries |\n|---|---|---|---|---|\n";
  for (const auto& r : metrics.rows) {
    md << "| " << r.attack << " | " << r.metadata.value("label", r.surrogate_design) << " | "
       << fmt2(r.attack_acc_mean) << " ± " << fmt2(r.attack_acc_std) << " | " << fmt2(r.knn_mean)
       << " | " << r.queries_total << " |\n";
  }
  md << "\nQuery ledger total: " << ledger_json.at("total").dump() << "\n";
  if (!analysis_json.is_null()) {
    const auto& p1 = analysis_json.at("p1");
    md << "\nP1: median P_T with P_S > " << p1.at("threshold") << " = " << p1.at("median_pt_conditioned")
       << ", over all samples = " << p1.at("median_pt_all") << ", share with P_T < 0.1 = "
       << p1.at("fraction_low_pt") << "\n";
    md << "Easy/hard embedder: " << analysis_json.at("embedder").get<std::string>() << "\n";
  }
  std::ofstream(dir / "summary.md") << md.str();

  const auto report_digest = sha256_hex(results.str() + queries.str());
  json rj = {{"config_digest", digest_},
             {"report_digest", report_digest},
             {"metrics", metrics.to_json()},
             {"ledger", ledger_json},
             {"analysis", analysis_json}};
  write_json(dir / "report.json", rj);
  log("report digest " + report_digest);
  finish_stage(Stage::Report, {{"report_digest", report_digest}}, {});
}

}  // namespace lokt::pipeline
