#include "lokt/baselines.hpp"

#include <algorithm>

namespace lokt::baselines {
using nlohmann::json;

std::string to_string(Kind k) {
  switch (k) {
    case Kind::DirectI:
      return "direct_i";
    case Kind::DirectII:
      return "direct_ii";
    case Kind::AcganI:
      return "acgan_i";
    case Kind::AcganII:
      return "acgan_ii";
  }
  return "unknown";
}

Kind kind_from_string(const std::string& s) {
  for (auto k : {Kind::DirectI, Kind::DirectII, Kind::AcganI, Kind::AcganII}) {
    if (to_string(k) == s) {
      return k;
    }
  }
  throw ConfigError("unknown baseline kind '" + s + "'");
}

bool is_direct(Kind k) { return k == Kind::DirectI || k == Kind::DirectII; }
bool is_augmented(Kind k) { return k == Kind::DirectII || k == Kind::AcganII; }

void BaselineSpec::validate() const {
  if (is_augmented(kind) && !augmentation) {
    throw ConfigError("baseline " + to_string(kind) + " requires an augmentation policy");
  }
  if (target_per_class < 0) {
    throw ConfigError("baseline target_per_class must be >= 0");
  }
  gan.validate();
}

json BaselineSpec::to_json() const {
  json j = {{"kind", to_string(kind)},
            {"target_per_class", target_per_class},
            {"gan", gan.to_json()},
            {"classifier", classifier.to_json()}};
  if (augmentation) {
    j["augmentation"] = augmentation->to_json();
  }
  return j;
}

BaselineSpec BaselineSpec::from_json(const json& j) {
  BaselineSpec s;
  s.kind = kind_from_string(j.at("kind"));
  if (j.contains("augmentation")) {
    s.augmentation = data::AugmentationPolicy::from_json(j.at("augmentation"));
  }
  s.target_per_class = j.value("target_per_class", int64_t{0});
  if (j.contains("gan")) {
    s.gan = gan::GanTrainConfig::from_json(j.at("gan"));
  }
  if (j.contains("classifier")) {
    s.classifier = oracle::TrainConfig::from_json(j.at("classifier"));
  }
  s.validate();
  return s;
}

BaselineResult run_baseline(const BaselineSpec& spec, const data::DatasetSplit& split,
                            oracle::HardLabelOracle& oracle) {
  spec.validate();
  auto relabeled = data::build_pseudo_labeled_public(split.public_images, oracle);
  return run_baseline(spec, relabeled);
}

BaselineResult run_baseline(const BaselineSpec& spec, const data::PseudoLabeledDataset& relabeled) {
  spec.validate();
  BaselineResult res;
  res.training_data = relabeled;
  res.coverage.histogram_before = relabeled.class_histogram;
  res.coverage.histogram_after = relabeled.class_histogram;
  for (int64_t c = 0; c < relabeled.num_classes; ++c) {
    if (relabeled.class_histogram[static_cast<size_t>(c)] == 0) {
      res.coverage.empty_classes.push_back(c);
    }
  }
  if (is_augmented(spec.kind)) {
    const auto largest = *std::max_element(relabeled.class_histogram.begin(),
                                           relabeled.class_histogram.end());
    const auto target = spec.target_per_class > 0 ? spec.target_per_class : largest;
    auto balanced = data::balance_by_augmentation(relabeled, target, *spec.augmentation);
    res.training_data = std::move(balanced.dataset);
    res.coverage = std::move(balanced.coverage);
  }
  if (res.training_data.size() == 0) {
    throw DataError("baseline has no training data");
  }
  if (is_direct(spec.kind)) {
    res.surrogate = surrogate::train_surrogate(res.training_data, "cd-head", spec.classifier,
                                               nullptr, spec.gan.arch);
  } else {
    auto g = gan::train_acgan(res.training_data, spec.gan);
    res.surrogate = surrogate::extract_cd(g.discriminator);
    res.gan = std::move(g);
  }
  res.surrogate->manifest()["baseline"] = to_string(spec.kind);
  res.surrogate->manifest()["empty_classes"] = res.coverage.empty_classes;
  return res;
}

}  // namespace lokt::baselines
