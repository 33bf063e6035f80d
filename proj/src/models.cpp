#include "lokt/models.hpp"

#include <algorithm>

namespace lokt::nn {
namespace F = torch::nn::functional;

namespace {

class CnnT : public ClassifierNet {
 public:
  CnnT(int64_t n, const ImageShape& s) : n_(n), shape_(s) {
    c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(s.channels, 16, 3).padding(1)));
    c2_ = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(16, 32, 3).padding(1)));
    f1_ = register_module("f1", torch::nn::Linear(32 * (s.height / 4) * (s.width / 4), 128));
    f2_ = register_module("f2", torch::nn::Linear(128, n));
  }
  torch::Tensor features(const torch::Tensor& x) override {
    auto h = F::max_pool2d(torch::relu(c1_(x)), F::MaxPool2dFuncOptions(2));
    h = F::max_pool2d(torch::relu(c2_(h)), F::MaxPool2dFuncOptions(2));
    return torch::relu(f1_(h.flatten(1)));
  }
  torch::Tensor forward(const torch::Tensor& x) override { return f2_(features(x)); }
  int64_t num_classes() const override { return n_; }
  ImageShape input_shape() const override { return shape_; }
  std::string architecture_id() const override { return "cnn-t"; }

 private:
  int64_t n_;
  ImageShape shape_;
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr};
  torch::nn::Linear f1_{nullptr}, f2_{nullptr};
};

// Wider 5x5 first layer, ELU and average pooling: deliberately unlike cnn-t.
class CnnE : public ClassifierNet {
 public:
  CnnE(int64_t n, const ImageShape& s) : n_(n), shape_(s) {
    c1_ = register_module("c1", torch::nn::Conv2d(torch::nn::Conv2dOptions(s.channels, 24, 5).padding(2)));
    c2_ = register_module("c2", torch::nn::Conv2d(torch::nn::Conv2dOptions(24, 48, 3).padding(1)));
    f1_ = register_module("f1", torch::nn::Linear(48 * (s.height / 4) * (s.width / 4), 128));
    f2_ = register_module("f2", torch::nn::Linear(128, n));
  }
  torch::Tensor features(const torch::Tensor& x) override {
    auto h = F::avg_pool2d(torch::elu(c1_(x)), F::AvgPool2dFuncOptions(2));
    h = F::avg_pool2d(torch::elu(c2_(h)), F::AvgPool2dFuncOptions(2));
    return torch::elu(f1_(h.flatten(1)));
  }
  torch::Tensor forward(const torch::Tensor& x) override { return f2_(features(x)); }
  int64_t num_classes() const override { return n_; }
  ImageShape input_shape() const override { return shape_; }
  std::string architecture_id() const override { return "cnn-e"; }

 private:
  int64_t n_;
  ImageShape shape_;
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr};
  torch::nn::Linear f1_{nullptr}, f2_{nullptr};
};

// Small dense-connectivity CNN: each layer appends `growth` channels;
// blocks are separated by 1x1 compression and 2x2 average pooling.
class DenseNet : public ClassifierNet {
 public:
  DenseNet(std::string id, std::vector<int64_t> layers, int64_t n, const ImageShape& s,
           int64_t growth = 8)
      : id_(std::move(id)), n_(n), shape_(s) {
    int64_t c = 16;
    stem_ = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(s.channels, c, 3)
                                                           .padding(1)
                                                           .bias(false)));
    for (size_t b = 0; b < layers.size(); ++b) {
      Block blk;
      for (int64_t l = 0; l < layers[b]; ++l) {
        auto name = "b" + std::to_string(b) + "l" + std::to_string(l);
        blk.bns.push_back(register_module(name + "bn", torch::nn::BatchNorm2d(c)));
        blk.convs.push_back(register_module(
            name + "conv",
            torch::nn::Conv2d(torch::nn::Conv2dOptions(c, growth, 3).padding(1).bias(false))));
        c += growth;
      }
      if (b + 1 < layers.size()) {
        auto name = "t" + std::to_string(b);
        blk.trans_bn = register_module(name + "bn", torch::nn::BatchNorm2d(c));
        blk.trans = register_module(
            name + "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c / 2, 1).bias(false)));
        c /= 2;
      }
      blocks_.push_back(std::move(blk));
    }
    final_bn_ = register_module("final_bn", torch::nn::BatchNorm2d(c));
    fc_ = register_module("fc", torch::nn::Linear(c, n));
  }
  torch::Tensor features(const torch::Tensor& x) override {
    auto h = stem_(x);
    for (auto& b : blocks_) {
      for (size_t l = 0; l < b.convs.size(); ++l) {
        h = torch::cat({h, b.convs[l](torch::relu(b.bns[l](h)))}, 1);
      }
      if (b.trans) {
        h = F::avg_pool2d(b.trans(torch::relu(b.trans_bn(h))), F::AvgPool2dFuncOptions(2));
      }
    }
    return torch::relu(final_bn_(h)).mean({2, 3});
  }
  torch::Tensor forward(const torch::Tensor& x) override { return fc_(features(x)); }
  int64_t num_classes() const override { return n_; }
  ImageShape input_shape() const override { return shape_; }
  std::string architecture_id() const override { return id_; }

 private:
  struct Block {
    std::vector<torch::nn::BatchNorm2d> bns;
    std::vector<torch::nn::Conv2d> convs;
    torch::nn::BatchNorm2d trans_bn{nullptr};
    torch::nn::Conv2d trans{nullptr};
  };
  std::string id_;
  int64_t n_;
  ImageShape shape_;
  torch::nn::Conv2d stem_{nullptr};
  std::vector<Block> blocks_;
  torch::nn::BatchNorm2d final_bn_{nullptr};
  torch::nn::Linear fc_{nullptr};
};

}  // namespace

std::vector<std::string> classifier_architectures() {
  return {"cnn-t", "cnn-e", "densenet-s", "densenet-m", "densenet-l", "cd-head"};
}

bool is_registered_architecture(const std::string& id) {
  auto all = classifier_architectures();
  return std::find(all.begin(), all.end(), id) != all.end();
}

std::shared_ptr<ClassifierNet> make_classifier(const std::string& id, int64_t num_classes,
                                               const ImageShape& shape) {
  if (num_classes < 1) {
    throw ConfigError("classifier needs at least one class");
  }
  if (id == "cnn-t") {
    return std::make_shared<CnnT>(num_classes, shape);
  }
  if (id == "cnn-e") {
    return std::make_shared<CnnE>(num_classes, shape);
  }
  if (id == "densenet-s") {
    return std::make_shared<DenseNet>(id, std::vector<int64_t>{2, 2}, num_classes, shape);
  }
  if (id == "densenet-m") {
    return std::make_shared<DenseNet>(id, std::vector<int64_t>{3, 3}, num_classes, shape);
  }
  if (id == "densenet-l") {
    return std::make_shared<DenseNet>(id, std::vector<int64_t>{4, 4}, num_classes, shape);
  }
  if (id == "cd-head") {
    return std::make_shared<CDClassifier>(std::make_shared<Discriminator>(num_classes, shape));
  }
  throw ConfigError("unknown architecture id '" + id + "'");
}

// ---------------------------------------------------------------------------

SNLinear::SNLinear(int64_t in, int64_t out, bool bias) {
  torch::nn::Linear init(torch::nn::LinearOptions(in, out).bias(bias));
  weight_ = register_parameter("weight", init->weight.detach().clone());
  if (bias) {
    bias_ = register_parameter("bias", init->bias.detach().clone());
  }
  u_ = register_buffer("u", F::normalize(torch::randn({out}), F::NormalizeFuncOptions().dim(0)));
}

torch::Tensor SNLinear::normalized_weight() {
  torch::Tensor v;
  {
    torch::NoGradGuard ng;
    auto w = weight_.detach();
    v = F::normalize(torch::mv(w.t(), u_), F::NormalizeFuncOptions().dim(0).eps(1e-12));
    if (is_training()) {
      u_.copy_(F::normalize(torch::mv(w, v), F::NormalizeFuncOptions().dim(0).eps(1e-12)));
      v = F::normalize(torch::mv(w.t(), u_), F::NormalizeFuncOptions().dim(0).eps(1e-12));
    }
  }
  // u_ is a snapshot: later forwards update the buffer before backward runs.
  auto sigma = torch::dot(u_.clone(), torch::mv(weight_, v));
  return weight_ / sigma;
}

torch::Tensor SNLinear::forward(const torch::Tensor& x) {
  return F::linear(x, normalized_weight(), bias_.defined() ? bias_ : torch::Tensor());
}

ConditionalBatchNorm::ConditionalBatchNorm(int64_t features, int64_t num_classes) {
  bn_ = register_module("bn", torch::nn::BatchNorm1d(torch::nn::BatchNorm1dOptions(features).affine(false)));
  gamma_ = register_module("gamma", torch::nn::Embedding(num_classes, features));
  beta_ = register_module("beta", torch::nn::Embedding(num_classes, features));
  torch::NoGradGuard ng;
  gamma_->weight.fill_(1.0);
  beta_->weight.zero_();
}

torch::Tensor ConditionalBatchNorm::forward(const torch::Tensor& x, const torch::Tensor& y) {
  return bn_(x) * gamma_(y) + beta_(y);
}

// ---------------------------------------------------------------------------

Generator::Generator(int64_t num_classes, const ImageShape& shape, const GanArchitecture& arch)
    : num_classes_(num_classes), shape_(shape), arch_(arch) {
  if (num_classes < 1 || arch.latent_dim < 1 || arch.hidden < 1) {
    throw ConfigError("invalid generator configuration");
  }
  input_ = register_module("input", torch::nn::Linear(arch.latent_dim, arch.hidden));
  for (int64_t b = 0; b < arch.blocks; ++b) {
    for (int64_t j = 0; j < 2; ++j) {
      auto name = "b" + std::to_string(b) + "_" + std::to_string(j);
      norms_.push_back(register_module(name + "_norm",
                                       std::make_shared<ConditionalBatchNorm>(arch.hidden, num_classes)));
      linears_.push_back(register_module(name + "_fc", torch::nn::Linear(arch.hidden, arch.hidden)));
    }
  }
  out_norm_ = register_module("out_norm", std::make_shared<ConditionalBatchNorm>(arch.hidden, num_classes));
  output_ = register_module("output", torch::nn::Linear(arch.hidden, shape.numel()));
}

torch::Tensor Generator::forward(const torch::Tensor& z, const torch::Tensor& y) {
  auto h = input_(z);
  for (size_t b = 0; b + 1 < linears_.size(); b += 2) {
    auto r = linears_[b](torch::relu(norms_[b]->forward(h, y)));
    r = linears_[b + 1](torch::relu(norms_[b + 1]->forward(r, y)));
    h = h + r;
  }
  auto x = torch::tanh(output_(torch::relu(out_norm_->forward(h, y))));
  return x.view({-1, shape_.channels, shape_.height, shape_.width});
}

Discriminator::Discriminator(int64_t num_classes, const ImageShape& shape,
                             const GanArchitecture& arch)
    : num_classes_(num_classes), shape_(shape), arch_(arch) {
  if (num_classes < 1 || arch.hidden < 1) {
    throw ConfigError("invalid discriminator configuration");
  }
  input_ = register_module("input", std::make_shared<SNLinear>(shape.numel(), arch.hidden));
  for (int64_t b = 0; b < 2 * arch.blocks; ++b) {
    blocks_.push_back(register_module("block" + std::to_string(b),
                                      std::make_shared<SNLinear>(arch.hidden, arch.hidden)));
  }
  source_ = register_module("source", std::make_shared<SNLinear>(arch.hidden, 1));
  classes_ = register_module("classes", std::make_shared<SNLinear>(arch.hidden, num_classes));
  trained_iterations_ = register_buffer("trained_iterations", torch::zeros({1}, torch::kInt64));
}

torch::Tensor Discriminator::trunk(const torch::Tensor& x) {
  auto h = input_->forward(x.flatten(1));
  for (size_t b = 0; b + 1 < blocks_.size(); b += 2) {
    auto r = blocks_[b]->forward(torch::leaky_relu(h, 0.2));
    r = blocks_[b + 1]->forward(torch::leaky_relu(r, 0.2));
    h = h + r;
  }
  return torch::leaky_relu(h, 0.2);
}

torch::Tensor Discriminator::source_head(const torch::Tensor& h) {
  return source_->forward(h).squeeze(1);
}

torch::Tensor Discriminator::class_head(const torch::Tensor& h) { return classes_->forward(h); }

DiscriminatorOutput Discriminator::forward(const torch::Tensor& x) {
  auto h = trunk(x);
  return {source_head(h), class_head(h)};
}

torch::Tensor Discriminator::realness(const torch::Tensor& images) {
  return source_head(trunk(images));
}

int64_t Discriminator::trained_iterations() const { return trained_iterations_.item<int64_t>(); }

void Discriminator::set_trained_iterations(int64_t n) { trained_iterations_.fill_(n); }

CDClassifier::CDClassifier(std::shared_ptr<Discriminator> disc) : disc_(std::move(disc)) {
  register_module("disc", disc_);
}

torch::Tensor CDClassifier::forward(const torch::Tensor& x) {
  return disc_->class_head(disc_->trunk(x));
}

torch::Tensor CDClassifier::features(const torch::Tensor& x) { return disc_->trunk(x); }

// ---------------------------------------------------------------------------

void save_module(torch::nn::Module& module, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive archive;
  module.save(archive);
  archive.save_to(path.string());
}

void load_module(torch::nn::Module& module, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw PrerequisiteError("missing checkpoint " + path.string());
  }
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  module.load(archive);
}

namespace {
template <typename Fn>
torch::Tensor chunked(ClassifierNet& net, const torch::Tensor& images, int64_t chunk, Fn fn) {
  torch::NoGradGuard ng;
  const bool was_training = net.is_training();
  net.eval();
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < images.size(0); i += chunk) {
    out.push_back(fn(images.slice(0, i, std::min(images.size(0), i + chunk))));
  }
  if (out.empty()) {
    out.push_back(fn(images));
  }
  net.train(was_training);
  return torch::cat(out);
}
}  // namespace

torch::Tensor predict_logits(ClassifierNet& net, const torch::Tensor& images, int64_t chunk) {
  return chunked(net, images, chunk, [&](const torch::Tensor& x) { return net.forward(x); });
}

torch::Tensor predict_features(ClassifierNet& net, const torch::Tensor& images, int64_t chunk) {
  return chunked(net, images, chunk, [&](const torch::Tensor& x) { return net.features(x); });
}

}  // namespace lokt::nn
