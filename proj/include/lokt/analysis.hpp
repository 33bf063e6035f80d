#pragma once

#include "lokt/oracle.hpp"
#include "lokt/surrogate.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace lokt::analysis {

struct LikelihoodRecord {
  int64_t sample_id = 0;
  int64_t label = 0;
  double p_s = 0.0;
  double p_t = 0.0;
  int64_t epoch = 0;
};

/// Ten bins of width 0.1 over [0, 1]; the value 1.0 falls in the last bin.
std::vector<int64_t> unit_histogram(const std::vector<double>& values);

struct ConditionalHistogram {
  double threshold = 0.9;
  std::vector<int64_t> conditional;    // P_T over {P_S > threshold}
  std::vector<int64_t> unconditional;  // P_T over every sample
  int64_t num_samples = 0;
  int64_t num_conditioned = 0;
  double median_pt_conditioned = 0.0;  // NaN when nothing is conditioned
  double median_pt_all = 0.0;
  double fraction_low_pt = 0.0;        // share of conditioned samples with P_T < 0.1
  bool empty_conditioning = false;

  nlohmann::json to_json() const;
  void save_csv(const std::filesystem::path& path) const;
};

/// Lower median (the element at index (n-1)/2 of the sorted values).
double median(std::vector<double> v);

/// P_S(ỹ|x) and P_T(ỹ|x) of every sample.
std::vector<LikelihoodRecord> likelihood_records(const torch::Tensor& images,
                                                 const torch::Tensor& labels,
                                                 surrogate::LikelihoodModel& S,
                                                 const oracle::ExperimenterProbe& probe,
                                                 int64_t epoch = 0);

ConditionalHistogram conditional_pt_histogram(const std::vector<LikelihoodRecord>& records,
                                              double threshold);
ConditionalHistogram conditional_pt_histogram(const torch::Tensor& images,
                                              const torch::Tensor& labels,
                                              surrogate::LikelihoodModel& S,
                                              const oracle::ExperimenterProbe& probe,
                                              double threshold);

struct EasyHardSplit {
  std::map<int64_t, std::vector<double>> centroids;
  std::vector<double> distances;  // per sample
  std::vector<bool> easy;         // per sample
  double rho = 0.7;
};

/// Per class: centroid = mean embedding, easy = the ceil(rho * n) samples
/// closest to it (ties by sample index). Every class present needs >= 2
/// samples.
EasyHardSplit easy_hard_split(const torch::Tensor& embeddings, const torch::Tensor& labels,
                              double rho = 0.7);

/// One record list per checkpoint, all sharing the P_T column.
std::vector<std::vector<LikelihoodRecord>> track_ps_dynamics(
    const torch::Tensor& images, const torch::Tensor& labels,
    const std::vector<surrogate::Checkpoint>& checkpoints, const oracle::ExperimenterProbe& probe);

struct DynamicsSummary {
  std::vector<int64_t> epochs;
  std::vector<double> easy_mean_ps;
  std::vector<double> hard_mean_ps;

  nlohmann::json to_json() const;
  void save_csv(const std::filesystem::path& path) const;
};

DynamicsSummary summarize_dynamics(const std::vector<std::vector<LikelihoodRecord>>& dynamics,
                                   const EasyHardSplit& split);

}  // namespace lokt::analysis
