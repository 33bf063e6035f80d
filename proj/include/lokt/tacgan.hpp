#pragma once

#include "lokt/datasets.hpp"
#include "lokt/losses.hpp"
#include "lokt/models.hpp"
#include "lokt/oracle.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <vector>

namespace lokt::gan {

enum class AdversarialLoss { CrossEntropy, Hinge };
/// Generator adversarial term for the cross-entropy loss. NonSaturating
/// minimizes -log P(Real|x_f); Minimax minimizes log P(Fake|x_f) literally.
enum class GeneratorObjective { NonSaturating, Minimax };

struct GanTrainConfig {
  int64_t iterations = 1000;
  int64_t batch_size = 64;
  int64_t d_steps = 5;
  double lambda1 = 1.0;
  double lambda2 = 1.5;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.9;
  AdversarialLoss adversarial = AdversarialLoss::CrossEntropy;
  GeneratorObjective g_objective = GeneratorObjective::NonSaturating;
  nn::GanArchitecture arch;
  uint64_t seed = 0;

  /// Throws ConfigError unless I, B, k > 0 and λ1, λ2 >= 0.
  void validate() const;
  nlohmann::json to_json() const;
  static GanTrainConfig from_json(const nlohmann::json& j);
};

struct GammaTrace {
  /// Per-iteration mean of the per-batch agreement over the k D steps.
  std::vector<double> values;

  double mean(size_t begin, size_t end) const;
  void save_csv(const std::filesystem::path& path) const;
  static GammaTrace load_csv(const std::filesystem::path& path);
};

/// Fraction of positions with y == ỹ. Throws on empty or mismatched input.
double track_gamma(const torch::Tensor& y, const torch::Tensor& ytilde);

/// Hooks into the training loop, mainly for tests and diagnostics.
class TrainingObserver {
 public:
  virtual ~TrainingObserver() = default;
  /// Conditioning labels of a fake batch about to be labeled by the oracle.
  virtual void on_fake_batch(const torch::Tensor& /*y*/) {}
  /// (y, ỹ) pair of one D step.
  virtual void on_labels(int64_t /*iteration*/, int64_t /*step*/, const torch::Tensor& /*y*/,
                         const torch::Tensor& /*ytilde*/) {}
  virtual void on_iteration(int64_t /*iteration*/, double /*d_loss*/, double /*g_loss*/) {}
};

struct TrainStats {
  std::vector<double> d_loss;  // per iteration, last D step
  std::vector<double> g_loss;
  int64_t clamped_logs = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

struct GanResult {
  std::shared_ptr<nn::Generator> generator;
  std::shared_ptr<nn::Discriminator> discriminator;
  GammaTrace gamma;
  TrainStats stats;
};

/// Target-assisted training. Every D step draws a fresh fake batch, labels it
/// with one oracle call (phase tacgan_training) and pairs it with a random
/// public batch that only feeds the source term. The G step is oracle-free.
GanResult train_tacgan(const torch::Tensor& public_images, oracle::HardLabelOracle& oracle,
                       const GanTrainConfig& cfg, TrainingObserver* observer = nullptr);
GanResult train_tacgan(const data::DatasetSplit& split, oracle::HardLabelOracle& oracle,
                       const GanTrainConfig& cfg, TrainingObserver* observer = nullptr);

/// Standard ACGAN on pseudo-labeled data (real samples carry a class term).
/// Never queries any oracle.
GanResult train_acgan(const data::PseudoLabeledDataset& ds, const GanTrainConfig& cfg,
                      TrainingObserver* observer = nullptr);

/// Unconditional GAN (single class, no class terms) used as the image prior
/// of the prior-regularized attack.
GanResult train_unconditional_gan(const torch::Tensor& images, const GanTrainConfig& cfg,
                                  TrainingObserver* observer = nullptr);

/// Writes generator.pt, discriminator.pt and manifest.json (caller metadata,
/// architecture, iterations, last γ).
void save_gan(const GanResult& r, const std::filesystem::path& dir,
              const nlohmann::json& metadata = {});
GanResult load_gan(const std::filesystem::path& dir);

}  // namespace lokt::gan
