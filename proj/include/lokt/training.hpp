#pragma once

#include "lokt/models.hpp"
#include "lokt/oracle.hpp"

#include <functional>

namespace lokt::train {

struct FitResult {
  double final_loss = 0.0;
  double train_accuracy = 0.0;
  int64_t steps = 0;
};

/// Called after every epoch with the zero-based epoch index.
using EpochHook = std::function<void(int64_t epoch, nn::ClassifierNet& net)>;

/// Cross-entropy training with the optimizer described by `cfg`. Throws
/// DivergenceError on a non-finite loss. Leaves the net in eval mode.
FitResult fit_classifier(nn::ClassifierNet& net, const torch::Tensor& images,
                         const torch::Tensor& labels, const oracle::TrainConfig& cfg,
                         const EpochHook& hook = {});

/// Fraction of rows whose argmax equals `labels`.
double accuracy(nn::ClassifierNet& net, const torch::Tensor& images, const torch::Tensor& labels);

}  // namespace lokt::train
