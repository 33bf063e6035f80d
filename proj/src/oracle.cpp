#include "lokt/oracle.hpp"

#include "lokt/digest.hpp"
#include "lokt/training.hpp"

#include <fstream>

namespace lokt::oracle {
using nlohmann::json;

namespace {
thread_local int g_attack_depth = 0;
constexpr std::array<const char*, 4> kPhaseNames = {"tacgan_training", "synthetic_labeling",
                                                    "public_relabeling", "other"};
}  // namespace

std::string to_string(QueryPhase p) { return kPhaseNames[static_cast<size_t>(p)]; }

json QueryLedger::to_json() const {
  json j;
  for (size_t i = 0; i < phases.size(); ++i) {
    j[kPhaseNames[i]] = phases[i];
  }
  j["total"] = total;
  return j;
}

QueryLedger QueryLedger::from_json(const json& j) {
  QueryLedger l;
  for (size_t i = 0; i < l.phases.size(); ++i) {
    l.phases[i] = j.value(kPhaseNames[i], int64_t{0});
    if (l.phases[i] < 0) {
      throw DataError("negative ledger counter");
    }
    l.total += l.phases[i];
  }
  if (j.contains("total") && j.at("total").get<int64_t>() != l.total) {
    throw DataError("ledger total does not equal the sum of its phases");
  }
  return l;
}

torch::Tensor argmax_lowest(const torch::Tensor& scores) {
  if (scores.dim() != 2 || scores.size(1) == 0) {
    throw DataError("argmax_lowest expects a (B, N) matrix");
  }
  auto best = std::get<0>(scores.max(1, true));
  auto idx = torch::arange(scores.size(1), torch::kInt64).expand_as(scores);
  auto masked = torch::where(scores == best, idx, torch::full_like(idx, scores.size(1)));
  return std::get<0>(masked.min(1));
}

// ---------------------------------------------------------------------------

json TrainConfig::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"optimizer", optimizer},
          {"lr", lr},         {"momentum", momentum},     {"weight_decay", weight_decay},
          {"cosine", cosine}, {"max_shift", max_shift},   {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optimizer = j.value("optimizer", c.optimizer);
  c.lr = j.value("lr", c.lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.cosine = j.value("cosine", c.cosine);
  c.max_shift = j.value("max_shift", c.max_shift);
  c.seed = j.value("seed", c.seed);
  return c;
}

torch::Tensor TargetModel::probabilities(const torch::Tensor& images) const {
  return torch::softmax(nn::predict_logits(*net, images), 1);
}

TargetModel train_target(const torch::Tensor& images, const torch::Tensor& labels,
                         const torch::Tensor& val_images, const torch::Tensor& val_labels,
                         int64_t num_classes, const std::string& architecture_id,
                         const TrainConfig& cfg) {
  if (images.size(0) == 0) {
    throw DataError("train_target: empty private set");
  }
  if (!nn::is_registered_architecture(architecture_id)) {
    throw ConfigError("train_target: unknown architecture '" + architecture_id + "'");
  }
  torch::manual_seed(cfg.seed);
  const ImageShape shape{images.size(2), images.size(3), images.size(1)};
  auto net = nn::make_classifier(architecture_id, num_classes, shape);
  auto fit = train::fit_classifier(*net, images, labels, cfg);
  TargetModel t{net, {}};
  t.manifest = {{"architecture_id", architecture_id},
                {"num_classes", num_classes},
                {"image_shape", {shape.height, shape.width, shape.channels}},
                {"seed", cfg.seed},
                {"epochs", cfg.epochs},
                {"train_config", cfg.to_json()},
                {"dataset_digest", Sha256().update(images).update(labels).hex()},
                {"train_accuracy", fit.train_accuracy},
                {"val_accuracy", val_images.size(0) > 0
                                     ? train::accuracy(*net, val_images, val_labels)
                                     : 0.0}};
  return t;
}

void save_target(const TargetModel& t, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_module(*t.net, dir / "model.pt");
  std::ofstream(dir / "manifest.json") << t.manifest.dump(2) << "\n";
}

TargetModel load_target(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw PrerequisiteError("missing target manifest " + (dir / "manifest.json").string());
  }
  TargetModel t;
  t.manifest = json::parse(in);
  auto s = t.manifest.at("image_shape").get<std::vector<int64_t>>();
  t.net = nn::make_classifier(t.manifest.at("architecture_id"),
                              t.manifest.at("num_classes").get<int64_t>(), {s[0], s[1], s[2]});
  nn::load_module(*t.net, dir / "model.pt");
  t.net->eval();
  return t;
}

ClassifierBackend::ClassifierBackend(std::shared_ptr<nn::ClassifierNet> net)
    : net_(std::move(net)) {}

torch::Tensor ClassifierBackend::scores(const torch::Tensor& images) {
  std::lock_guard lock(mu_);
  return nn::predict_logits(*net_, images);
}

int64_t ClassifierBackend::num_classes() const { return net_->num_classes(); }

ImageShape ClassifierBackend::input_shape() const { return net_->input_shape(); }

// ---------------------------------------------------------------------------

HardLabelOracle::HardLabelOracle(std::shared_ptr<LabelingBackend> backend, PixelRange range)
    : backend_(std::move(backend)), range_(range) {
  if (!backend_) {
    throw ConfigError("oracle needs a labeling backend");
  }
}

torch::Tensor HardLabelOracle::query(const torch::Tensor& images, QueryPhase phase) {
  check_image_batch(images, backend_->input_shape(), range_);
  torch::Tensor labels;
  {
    torch::NoGradGuard ng;
    labels = argmax_lowest(backend_->scores(images.detach()));
  }
  std::lock_guard lock(mu_);
  ledger_.phases[static_cast<size_t>(phase)] += images.size(0);
  ledger_.total += images.size(0);
  return labels;
}

QueryLedger HardLabelOracle::ledger_report() const {
  std::lock_guard lock(mu_);
  return ledger_;
}

void HardLabelOracle::restore(const QueryLedger& previous) {
  std::lock_guard lock(mu_);
  for (size_t i = 0; i < ledger_.phases.size(); ++i) {
    ledger_.phases[i] += previous.phases[i];
  }
  ledger_.total += previous.total;
}

// ---------------------------------------------------------------------------

AttackPhaseScope::AttackPhaseScope() { ++g_attack_depth; }
AttackPhaseScope::~AttackPhaseScope() { --g_attack_depth; }
bool AttackPhaseScope::active() { return g_attack_depth > 0; }

ExperimenterProbe::ExperimenterProbe(std::shared_ptr<LabelingBackend> backend,
                                     const ExperimenterCapability& /*cap*/)
    : backend_(std::move(backend)) {
  if (!backend_) {
    throw ConfigError("probe needs a backend");
  }
}

ExperimenterCapability ExperimenterProbe::grant() {
  if (AttackPhaseScope::active()) {
    throw PrivilegeViolation("experimenter capability requested from an attack phase");
  }
  return {};
}

torch::Tensor ExperimenterProbe::probabilities(const torch::Tensor& images) const {
  if (AttackPhaseScope::active()) {
    throw PrivilegeViolation("soft probabilities requested from an attack phase");
  }
  torch::NoGradGuard ng;
  return torch::softmax(backend_->scores(images.detach()), 1);
}

}  // namespace lokt::oracle
