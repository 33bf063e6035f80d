#pragma once

#include "lokt/inversion.hpp"
#include "lokt/models.hpp"
#include "lokt/oracle.hpp"

#include <json.hpp>

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lokt::eval {

struct EvaluationModel {
  std::shared_ptr<nn::ClassifierNet> net;
  nlohmann::json manifest;

  torch::Tensor features(const torch::Tensor& images) const;
  torch::Tensor predict(const torch::Tensor& images) const;  // hard labels
};

/// Trains E on the private data. Rejects `architecture_id == target_architecture`.
EvaluationModel train_eval_model(const torch::Tensor& images, const torch::Tensor& labels,
                                 const torch::Tensor& val_images, const torch::Tensor& val_labels,
                                 int64_t num_classes, const std::string& architecture_id,
                                 const std::string& target_architecture,
                                 const oracle::TrainConfig& cfg);

void save_eval_model(const EvaluationModel& e, const std::filesystem::path& dir);
EvaluationModel load_eval_model(const std::filesystem::path& dir);

struct AccuracyFragment {
  std::vector<double> per_class;  // percent
  double mean = 0.0;              // percent, mean over classes
};

/// Top-1 percentage of the given reconstructions that E assigns to their
/// target class. Every class 0..N-1 must be present with >= 1 reconstruction.
AccuracyFragment attack_accuracy(const std::vector<inversion::ReconstructionSet>& selected,
                                 const EvaluationModel& E, int64_t num_classes);

/// min_j ||a_i - b_j||_2 for every row of `a`, computed in double precision.
std::vector<double> min_distances(const torch::Tensor& a, const torch::Tensor& b);

struct KnnFragment {
  std::vector<double> per_class;  // mean over that class's reconstructions
  double mean = 0.0;              // mean over classes
};

/// For every reconstruction, the smallest feature distance to a private
/// image of its target class.
KnnFragment knn_distance(const std::vector<inversion::ReconstructionSet>& recons,
                         const torch::Tensor& private_images, const torch::Tensor& private_labels,
                         const EvaluationModel& E);

struct MetricRow {
  std::string setup;
  std::string attack;
  std::string surrogate_design;
  double attack_acc_mean = 0.0;
  double attack_acc_std = 0.0;
  double knn_mean = 0.0;
  int64_t queries_total = 0;
  std::vector<double> per_class_acc;
  std::vector<double> per_class_knn;
  std::vector<double> seed_acc;  // one entry per attack seed
  nlohmann::json metadata;

  nlohmann::json to_json() const;
  static MetricRow from_json(const nlohmann::json& j);
};

/// Aggregates per-seed fragments: mean and population std of the per-seed
/// accuracies, per-class values averaged over seeds.
MetricRow aggregate(const std::string& setup, const std::string& attack,
                    const std::string& design, const std::vector<AccuracyFragment>& acc,
                    const std::vector<KnnFragment>& knn, int64_t queries_total);

struct MetricReport {
  std::vector<MetricRow> rows;

  const MetricRow* find(const std::string& attack, const std::string& design) const;
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& csv, const std::filesystem::path& json) const;
};

}  // namespace lokt::eval
