#pragma once

#include "lokt/oracle.hpp"
#include "lokt/surrogate.hpp"
#include "lokt/tacgan.hpp"

#include <deque>
#include <functional>
#include <memory>

namespace lokt::testing {

/// Backend whose scores come from an arbitrary function of the images.
class FnBackend : public oracle::LabelingBackend {
 public:
  FnBackend(int64_t n, ImageShape shape, std::function<torch::Tensor(const torch::Tensor&)> fn)
      : n_(n), shape_(shape), fn_(std::move(fn)) {}
  torch::Tensor scores(const torch::Tensor& images) override {
    ++calls;
    return fn_(images);
  }
  int64_t num_classes() const override { return n_; }
  ImageShape input_shape() const override { return shape_; }
  int64_t calls = 0;

 private:
  int64_t n_;
  ImageShape shape_;
  std::function<torch::Tensor(const torch::Tensor&)> fn_;
};

inline std::shared_ptr<FnBackend> constant_backend(int64_t n, ImageShape shape, int64_t label) {
  return std::make_shared<FnBackend>(n, shape, [n, label](const torch::Tensor& x) {
    auto s = torch::zeros({x.size(0), n});
    s.index_put_({torch::indexing::Slice(), label}, 1.0);
    return s;
  });
}

/// Fixed random linear map from flattened pixels to logits.
inline std::shared_ptr<FnBackend> linear_backend(int64_t n, ImageShape shape, uint64_t seed) {
  auto gen = make_generator(seed);
  auto w = torch::randn({shape.numel(), n}, gen);
  return std::make_shared<FnBackend>(n, shape, [w](const torch::Tensor& x) {
    return x.reshape({x.size(0), -1}).to(torch::kFloat32).matmul(w);
  });
}

/// Echoes the conditioning labels of the pending fake batch: pairs with an
/// observer that announces them right before each oracle call.
class EchoBackend : public oracle::LabelingBackend, public gan::TrainingObserver {
 public:
  EchoBackend(int64_t n, ImageShape shape) : n_(n), shape_(shape) {}
  void on_fake_batch(const torch::Tensor& y) override { pending_.push_back(y.clone()); }
  void on_labels(int64_t it, int64_t step, const torch::Tensor& y, const torch::Tensor& yt) override {
    log.push_back({it, step, y.clone(), yt.clone()});
  }
  torch::Tensor scores(const torch::Tensor& images) override {
    if (pending_.empty()) {
      throw Error("echo backend: no pending labels");
    }
    auto y = pending_.front();
    pending_.pop_front();
    if (y.size(0) != images.size(0)) {
      throw Error("echo backend: batch mismatch");
    }
    return torch::one_hot(y, n_).to(torch::kFloat32);
  }
  int64_t num_classes() const override { return n_; }
  ImageShape input_shape() const override { return shape_; }

  struct Entry {
    int64_t iteration;
    int64_t step;
    torch::Tensor y;
    torch::Tensor ytilde;
  };
  std::vector<Entry> log;

 private:
  int64_t n_;
  ImageShape shape_;
  std::deque<torch::Tensor> pending_;
};

/// Observer that only records (y, ỹ) pairs.
struct PairLog : gan::TrainingObserver {
  std::vector<std::pair<int64_t, std::pair<torch::Tensor, torch::Tensor>>> pairs;
  void on_labels(int64_t it, int64_t, const torch::Tensor& y, const torch::Tensor& yt) override {
    pairs.push_back({it, {y.clone(), yt.clone()}});
  }
};

inline torch::Tensor random_images(int64_t n, ImageShape shape, uint64_t seed) {
  auto gen = make_generator(seed);
  return torch::rand({n, shape.channels, shape.height, shape.width}, gen) * 2 - 1;
}

inline gan::GanTrainConfig tiny_gan(int64_t iterations, int64_t batch, uint64_t seed = 0) {
  gan::GanTrainConfig c;
  c.iterations = iterations;
  c.batch_size = batch;
  c.d_steps = 5;
  c.arch = {8, 32, 1};
  c.seed = seed;
  return c;
}

/// Linear map z -> logits wrapped as a classifier over (1, 1, d) "images".
class LinearNet : public nn::ClassifierNet {
 public:
  LinearNet(int64_t d, int64_t n, uint64_t seed) : d_(d), n_(n) {
    auto gen = make_generator(seed);
    w = register_parameter("w", torch::randn({d, n}, gen));
  }
  torch::Tensor forward(const torch::Tensor& x) override { return features(x).matmul(w); }
  torch::Tensor features(const torch::Tensor& x) override { return x.reshape({x.size(0), -1}); }
  int64_t num_classes() const override { return n_; }
  ImageShape input_shape() const override { return {1, d_, 1}; }
  std::string architecture_id() const override { return "linear-toy"; }
  torch::Tensor w;

 private:
  int64_t d_;
  int64_t n_;
};

/// G(z, y) = z reshaped to a (1, 1, d) image.
struct IdentityGenerator : nn::LatentGenerator {
  explicit IdentityGenerator(int64_t d) : d(d) {}
  torch::Tensor generate(const torch::Tensor& z, const torch::Tensor&) override {
    return z.reshape({z.size(0), 1, 1, d});
  }
  int64_t latent_dim() const override { return d; }
  int64_t d;
};

}  // namespace lokt::testing
