#pragma once

#include "lokt/datasets.hpp"
#include "lokt/models.hpp"
#include "lokt/oracle.hpp"
#include "lokt/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lokt::surrogate {

/// Differentiable class log-likelihoods log P_S(c|x), the quantity the
/// inversion engine ascends.
class LikelihoodModel {
 public:
  virtual ~LikelihoodModel() = default;
  /// (B, N) log-likelihoods; differentiable w.r.t. `images`.
  virtual torch::Tensor log_probs(const torch::Tensor& images) = 0;
  virtual int64_t num_classes() const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual std::string id() const = 0;
  /// exp(log_probs) without gradients, in evaluation mode.
  torch::Tensor likelihoods(const torch::Tensor& images, int64_t chunk = 512);
};

enum class Provenance { CdHead, SyntheticTrained, PublicTrained };
std::string to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

class SurrogateModel : public LikelihoodModel {
 public:
  SurrogateModel(std::shared_ptr<nn::ClassifierNet> net, Provenance provenance,
                 nlohmann::json manifest = {});

  torch::Tensor log_probs(const torch::Tensor& images) override;
  int64_t num_classes() const override { return net_->num_classes(); }
  ImageShape input_shape() const override { return net_->input_shape(); }
  std::string id() const override { return net_->architecture_id(); }

  /// Softmax rows, no gradients.
  torch::Tensor probabilities(const torch::Tensor& images);

  const std::shared_ptr<nn::ClassifierNet>& net() const { return net_; }
  Provenance provenance() const { return provenance_; }
  const nlohmann::json& manifest() const { return manifest_; }
  nlohmann::json& manifest() { return manifest_; }

 private:
  std::shared_ptr<nn::ClassifierNet> net_;
  Provenance provenance_;
  nlohmann::json manifest_;
};

/// Mean of member log-likelihoods. Members are kept sorted by architecture id
/// so the aggregate does not depend on the order they were supplied in.
class SurrogateEnsemble : public LikelihoodModel {
 public:
  torch::Tensor log_probs(const torch::Tensor& images) override;
  int64_t num_classes() const override { return members_.front()->num_classes(); }
  ImageShape input_shape() const override { return members_.front()->input_shape(); }
  std::string id() const override;
  std::string aggregation() const { return "mean_log_likelihood"; }
  const std::vector<std::shared_ptr<SurrogateModel>>& members() const { return members_; }

 private:
  friend SurrogateEnsemble build_ensemble(std::vector<std::shared_ptr<SurrogateModel>> models);
  std::vector<std::shared_ptr<SurrogateModel>> members_;
};

/// Requires >= 2 members with distinct architecture ids, equal N and shape.
SurrogateEnsemble build_ensemble(std::vector<std::shared_ptr<SurrogateModel>> models);

/// C∘D of a trained discriminator. Rejects a discriminator that never trained.
std::shared_ptr<SurrogateModel> extract_cd(std::shared_ptr<nn::Discriminator> disc);

/// N * per_class samples x_f = G(z, y), y cycling over the classes, each
/// labeled by one oracle query (phase synthetic_labeling). On an oracle
/// failure a partial-progress manifest is written to `progress_manifest`
/// (when non-empty) and the error is rethrown.
data::PseudoLabeledDataset generate_fake_dataset(nn::Generator& G, oracle::HardLabelOracle& oracle,
                                                 int64_t per_class, uint64_t seed,
                                                 const std::filesystem::path& progress_manifest = {},
                                                 int64_t batch_size = 500);

/// Parameter snapshot of a classifier taken at the end of an epoch.
struct Checkpoint {
  int64_t epoch = 0;
  std::shared_ptr<SurrogateModel> model;
};

/// Deep copy through serialization.
std::shared_ptr<nn::ClassifierNet> clone_classifier(nn::ClassifierNet& net);

/// Cross-entropy on (x, ỹ). The manifest records the pseudo-label training
/// accuracy. When `checkpoints` is given, a copy of the model is appended
/// after every epoch.
std::shared_ptr<SurrogateModel> train_surrogate(const data::PseudoLabeledDataset& ds,
                                                const std::string& architecture_id,
                                                const oracle::TrainConfig& cfg,
                                                std::vector<Checkpoint>* checkpoints = nullptr,
                                                const nn::GanArchitecture& cd_arch = {});

void save_surrogate(const SurrogateModel& s, const std::filesystem::path& dir);
std::shared_ptr<SurrogateModel> load_surrogate(const std::filesystem::path& dir);

/// Classifier of the given architecture; "cd-head" builds a fresh
/// discriminator with `cd_arch`.
std::shared_ptr<nn::ClassifierNet> make_surrogate_net(const std::string& architecture_id,
                                                      int64_t num_classes, const ImageShape& shape,
                                                      const nn::GanArchitecture& cd_arch = {});

}  // namespace lokt::surrogate
