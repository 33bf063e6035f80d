#pragma once

#include "lokt/datasets.hpp"
#include "lokt/oracle.hpp"
#include "lokt/surrogate.hpp"
#include "lokt/tacgan.hpp"

#include <json.hpp>

#include <memory>
#include <optional>
#include <string>

namespace lokt::baselines {

enum class Kind { DirectI, DirectII, AcganI, AcganII };
std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);
bool is_direct(Kind k);
bool is_augmented(Kind k);

struct BaselineSpec {
  Kind kind = Kind::DirectI;
  /// Required for the II variants.
  std::optional<data::AugmentationPolicy> augmentation;
  /// Per-class target for the II variants; 0 means the largest class count.
  int64_t target_per_class = 0;
  /// ACGAN variants; its architecture also sizes the C∘D-shaped classifier
  /// of the direct variants.
  gan::GanTrainConfig gan;
  /// Classifier training of the direct variants.
  oracle::TrainConfig classifier;

  void validate() const;
  nlohmann::json to_json() const;
  static BaselineSpec from_json(const nlohmann::json& j);
};

struct BaselineResult {
  std::shared_ptr<surrogate::SurrogateModel> surrogate;
  std::optional<gan::GanResult> gan;  // ACGAN variants
  data::PseudoLabeledDataset training_data;
  data::CoverageReport coverage;
};

/// Relabels the public set through the oracle (the only queries issued),
/// balances it for the II variants, then trains either a C∘D-shaped
/// classifier directly or a standard ACGAN whose C∘D becomes the surrogate.
BaselineResult run_baseline(const BaselineSpec& spec, const data::DatasetSplit& split,
                            oracle::HardLabelOracle& oracle);

/// Same, starting from an already relabeled public set.
BaselineResult run_baseline(const BaselineSpec& spec, const data::PseudoLabeledDataset& relabeled);

}  // namespace lokt::baselines
