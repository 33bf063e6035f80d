#pragma once

#include "lokt/common.hpp"
#include "lokt/models.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

namespace lokt::oracle {

enum class QueryPhase { TacganTraining = 0, SyntheticLabeling = 1, PublicRelabeling = 2, Other = 3 };

std::string to_string(QueryPhase p);

/// Immutable ledger snapshot.
struct QueryLedger {
  std::array<int64_t, 4> phases{};
  int64_t total = 0;

  int64_t at(QueryPhase p) const { return phases[static_cast<size_t>(p)]; }
  bool operator==(const QueryLedger&) const = default;

  nlohmann::json to_json() const;
  static QueryLedger from_json(const nlohmann::json& j);
};

/// What the oracle queries: anything producing (B, N) logits or scores.
class LabelingBackend {
 public:
  virtual ~LabelingBackend() = default;
  virtual torch::Tensor scores(const torch::Tensor& images) = 0;
  virtual int64_t num_classes() const = 0;
  virtual ImageShape input_shape() const = 0;
};

/// Row-wise argmax; ties resolve to the lowest class index.
torch::Tensor argmax_lowest(const torch::Tensor& scores);

// ---------------------------------------------------------------------------
// Target model

struct TrainConfig {
  int64_t epochs = 8;
  int64_t batch_size = 64;
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool cosine = false;
  int64_t max_shift = 0;  // random-translation augmentation during training
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct TargetModel {
  std::shared_ptr<nn::ClassifierNet> net;
  nlohmann::json manifest;

  /// Softmax rows; evaluation mode, no gradient.
  torch::Tensor probabilities(const torch::Tensor& images) const;
};

/// Trains a registered classifier architecture on (images, labels). The
/// manifest records architecture, seed, dataset digest and accuracies.
TargetModel train_target(const torch::Tensor& images, const torch::Tensor& labels,
                         const torch::Tensor& val_images, const torch::Tensor& val_labels,
                         int64_t num_classes, const std::string& architecture_id,
                         const TrainConfig& cfg);

void save_target(const TargetModel& t, const std::filesystem::path& dir);
TargetModel load_target(const std::filesystem::path& dir);

/// Adapts a TargetModel (or any classifier) to the labeling backend.
class ClassifierBackend : public LabelingBackend {
 public:
  explicit ClassifierBackend(std::shared_ptr<nn::ClassifierNet> net);
  torch::Tensor scores(const torch::Tensor& images) override;
  int64_t num_classes() const override;
  ImageShape input_shape() const override;

 private:
  std::shared_ptr<nn::ClassifierNet> net_;
  std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Attacker-facing oracle

/// Hard-label oracle with an exact, thread-safe query ledger. Only integer
/// labels leave this class.
class HardLabelOracle {
 public:
  explicit HardLabelOracle(std::shared_ptr<LabelingBackend> backend,
                           PixelRange range = PixelRange{});

  /// (B,) int64 labels. Shape and range are validated before anything is
  /// counted; the phase counter then grows by B atomically.
  torch::Tensor query(const torch::Tensor& images, QueryPhase phase);

  QueryLedger ledger_report() const;
  /// Adds counts from an earlier process (pipeline stages persist ledgers).
  void restore(const QueryLedger& previous);

  int64_t num_classes() const { return backend_->num_classes(); }
  ImageShape input_shape() const { return backend_->input_shape(); }

 private:
  std::shared_ptr<LabelingBackend> backend_;
  PixelRange range_;
  mutable std::mutex mu_;
  QueryLedger ledger_;
};

// ---------------------------------------------------------------------------
// Experimenter-only soft probe

/// Capability token. Only code outside the attack pipeline can mint one, via
/// ExperimenterProbe::grant(); attack stages never receive it.
class ExperimenterCapability {
 private:
  ExperimenterCapability() = default;
  friend class ExperimenterProbe;
};

/// Marks the current thread as executing attack-phase code. Nested scopes
/// are allowed.
class AttackPhaseScope {
 public:
  AttackPhaseScope();
  ~AttackPhaseScope();
  AttackPhaseScope(const AttackPhaseScope&) = delete;
  AttackPhaseScope& operator=(const AttackPhaseScope&) = delete;

  static bool active();
};

class ExperimenterProbe {
 public:
  ExperimenterProbe(std::shared_ptr<LabelingBackend> backend, const ExperimenterCapability& cap);

  /// Throws PrivilegeViolation when minted inside an attack phase.
  static ExperimenterCapability grant();

  /// Full softmax rows (B, N). Never touches any ledger. Throws
  /// PrivilegeViolation inside an attack phase.
  torch::Tensor probabilities(const torch::Tensor& images) const;

  int64_t num_classes() const { return backend_->num_classes(); }

 private:
  std::shared_ptr<LabelingBackend> backend_;
};

}  // namespace lokt::oracle
