#pragma once

#include "lokt/common.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lokt::nn {

/// Any classifier the pipeline trains or attacks.
class ClassifierNet : public torch::nn::Module {
 public:
  /// (B, C, H, W) -> (B, N) logits.
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
  /// Penultimate representation, (B, d).
  virtual torch::Tensor features(const torch::Tensor& x) = 0;
  virtual int64_t num_classes() const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual std::string architecture_id() const = 0;
};

/// Registered ids: cnn-t, cnn-e, densenet-s, densenet-m, densenet-l, cd-head.
std::vector<std::string> classifier_architectures();
bool is_registered_architecture(const std::string& id);
std::shared_ptr<ClassifierNet> make_classifier(const std::string& id, int64_t num_classes,
                                               const ImageShape& shape);

/// Linear layer with spectral normalization: one power iteration per training
/// forward pass, the estimate is frozen in eval mode.
class SNLinear : public torch::nn::Module {
 public:
  SNLinear(int64_t in, int64_t out, bool bias = true);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor normalized_weight();

 private:
  torch::Tensor weight_;
  torch::Tensor bias_;
  torch::Tensor u_;
};

/// BatchNorm1d without affine terms followed by a per-class scale and shift.
class ConditionalBatchNorm : public torch::nn::Module {
 public:
  ConditionalBatchNorm(int64_t features, int64_t num_classes);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& y);

 private:
  torch::nn::BatchNorm1d bn_{nullptr};
  torch::nn::Embedding gamma_{nullptr};
  torch::nn::Embedding beta_{nullptr};
};

/// Latent-to-image map used by the inversion engine.
class LatentGenerator {
 public:
  virtual ~LatentGenerator() = default;
  /// z (B, d_z), y (B,) int64 -> images (B, C, H, W).
  virtual torch::Tensor generate(const torch::Tensor& z, const torch::Tensor& y) = 0;
  virtual int64_t latent_dim() const = 0;
};

/// Realness score used by the prior-regularized attack.
class SourceCritic {
 public:
  virtual ~SourceCritic() = default;
  /// (B,) real/fake logit; larger means more real.
  virtual torch::Tensor realness(const torch::Tensor& images) = 0;
};

struct GanArchitecture {
  int64_t latent_dim = 32;
  int64_t hidden = 256;
  int64_t blocks = 2;
};

/// Residual MLP generator with class-conditional normalization and a tanh
/// output. With num_classes == 1 it is an unconditional generator.
class Generator : public torch::nn::Module, public LatentGenerator {
 public:
  Generator(int64_t num_classes, const ImageShape& shape, const GanArchitecture& arch = {});

  torch::Tensor forward(const torch::Tensor& z, const torch::Tensor& y);
  torch::Tensor generate(const torch::Tensor& z, const torch::Tensor& y) override {
    return forward(z, y);
  }
  int64_t latent_dim() const override { return arch_.latent_dim; }
  int64_t num_classes() const { return num_classes_; }
  const ImageShape& image_shape() const { return shape_; }
  const GanArchitecture& architecture() const { return arch_; }

 private:
  int64_t num_classes_;
  ImageShape shape_;
  GanArchitecture arch_;
  torch::nn::Linear input_{nullptr};
  std::vector<std::shared_ptr<ConditionalBatchNorm>> norms_;
  std::vector<torch::nn::Linear> linears_;
  std::shared_ptr<ConditionalBatchNorm> out_norm_;
  torch::nn::Linear output_{nullptr};
};

struct DiscriminatorOutput {
  torch::Tensor source_logit;  // (B,), P(Real|x) = sigmoid
  torch::Tensor class_logits;  // (B, N), P(c|x) = softmax
};

/// Spectrally normalized residual MLP trunk with a real/fake head and a class
/// head.
class Discriminator : public torch::nn::Module, public SourceCritic {
 public:
  Discriminator(int64_t num_classes, const ImageShape& shape, const GanArchitecture& arch = {});

  DiscriminatorOutput forward(const torch::Tensor& x);
  torch::Tensor trunk(const torch::Tensor& x);
  torch::Tensor source_head(const torch::Tensor& h);
  torch::Tensor class_head(const torch::Tensor& h);
  torch::Tensor realness(const torch::Tensor& images) override;

  int64_t num_classes() const { return num_classes_; }
  const ImageShape& image_shape() const { return shape_; }
  const GanArchitecture& architecture() const { return arch_; }

  /// Number of completed adversarial iterations, persisted with the weights.
  int64_t trained_iterations() const;
  void set_trained_iterations(int64_t n);

 private:
  int64_t num_classes_;
  ImageShape shape_;
  GanArchitecture arch_;
  std::shared_ptr<SNLinear> input_;
  std::vector<std::shared_ptr<SNLinear>> blocks_;
  std::shared_ptr<SNLinear> source_;
  std::shared_ptr<SNLinear> classes_;
  torch::Tensor trained_iterations_;
};

/// C∘D: the discriminator's class head on top of its trunk.
class CDClassifier : public ClassifierNet {
 public:
  explicit CDClassifier(std::shared_ptr<Discriminator> disc);

  torch::Tensor forward(const torch::Tensor& x) override;
  torch::Tensor features(const torch::Tensor& x) override;
  int64_t num_classes() const override { return disc_->num_classes(); }
  ImageShape input_shape() const override { return disc_->image_shape(); }
  std::string architecture_id() const override { return "cd-head"; }
  const std::shared_ptr<Discriminator>& discriminator() const { return disc_; }

 private:
  std::shared_ptr<Discriminator> disc_;
};

void save_module(torch::nn::Module& module, const std::filesystem::path& path);
void load_module(torch::nn::Module& module, const std::filesystem::path& path);

/// Runs `net` in eval mode over `images` in chunks without gradients.
torch::Tensor predict_logits(ClassifierNet& net, const torch::Tensor& images, int64_t chunk = 512);
torch::Tensor predict_features(ClassifierNet& net, const torch::Tensor& images,
                               int64_t chunk = 512);

}  // namespace lokt::nn
