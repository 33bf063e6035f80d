#include "lokt/training.hpp"

#include <cmath>

namespace lokt::train {

FitResult fit_classifier(nn::ClassifierNet& net, const torch::Tensor& images,
                         const torch::Tensor& labels, const oracle::TrainConfig& cfg,
                         const EpochHook& hook) {
  const auto n = images.size(0);
  if (n == 0) {
    throw DataError("cannot train a classifier on an empty dataset");
  }
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.lr <= 0) {
    throw ConfigError("invalid training configuration");
  }
  torch::manual_seed(cfg.seed);
  auto gen = make_generator(derive_seed(cfg.seed, 0x5eed));
  std::unique_ptr<torch::optim::Optimizer> opt;
  if (cfg.optimizer == "sgd") {
    opt = std::make_unique<torch::optim::SGD>(
        net.parameters(),
        torch::optim::SGDOptions(cfg.lr).momentum(cfg.momentum).weight_decay(cfg.weight_decay));
  } else if (cfg.optimizer == "adam") {
    opt = std::make_unique<torch::optim::Adam>(
        net.parameters(), torch::optim::AdamOptions(cfg.lr).weight_decay(cfg.weight_decay));
  } else {
    throw ConfigError("unknown optimizer '" + cfg.optimizer + "'");
  }
  const auto per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const auto total = cfg.epochs * per_epoch;
  FitResult res;
  for (int64_t ep = 0; ep < cfg.epochs; ++ep) {
    net.train();
    auto perm = torch::randperm(n, gen, torch::kInt64);
    for (int64_t i = 0; i < n; i += cfg.batch_size) {
      if (cfg.cosine) {
        const double lr = 0.5 * cfg.lr * (1.0 + std::cos(M_PI * static_cast<double>(res.steps) / total));
        for (auto& g : opt->param_groups()) {
          g.options().set_lr(lr);
        }
      }
      auto idx = perm.slice(0, i, std::min(n, i + cfg.batch_size));
      auto x = images.index_select(0, idx);
      auto y = labels.index_select(0, idx);
      if (cfg.max_shift > 0) {
        auto s = torch::randint(-cfg.max_shift, cfg.max_shift + 1, {2}, gen, torch::kInt64);
        x = torch::roll(x, {s[0].item<int64_t>(), s[1].item<int64_t>()}, {2, 3});
      }
      auto loss = torch::nn::functional::cross_entropy(net.forward(x), y);
      const double v = loss.item<double>();
      if (!std::isfinite(v)) {
        throw DivergenceError("classifier loss became non-finite at epoch " + std::to_string(ep) +
                              ", step " + std::to_string(res.steps));
      }
      opt->zero_grad();
      loss.backward();
      opt->step();
      res.final_loss = v;
      ++res.steps;
    }
    if (hook) {
      net.eval();
      hook(ep, net);
    }
  }
  net.eval();
  res.train_accuracy = accuracy(net, images, labels);
  return res;
}

double accuracy(nn::ClassifierNet& net, const torch::Tensor& images, const torch::Tensor& labels) {
  if (images.size(0) == 0) {
    return 0.0;
  }
  auto pred = oracle::argmax_lowest(nn::predict_logits(net, images));
  return pred.eq(labels).to(torch::kFloat64).mean().item<double>();
}

}  // namespace lokt::train
