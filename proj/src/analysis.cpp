#include "lokt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace lokt::analysis {
using nlohmann::json;

std::vector<int64_t> unit_histogram(const std::vector<double>& values) {
  std::vector<int64_t> h(10, 0);
  for (double v : values) {
    auto b = static_cast<int64_t>(std::floor(v * 10.0));
    h[static_cast<size_t>(std::clamp<int64_t>(b, 0, 9))] += 1;
  }
  return h;
}

double median(std::vector<double> v) {
  if (v.empty()) {
    return std::nan("");
  }
  const auto mid = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  return v[mid];
}

json ConditionalHistogram::to_json() const {
  return {{"threshold", threshold},
          {"conditional", conditional},
          {"unconditional", unconditional},
          {"num_samples", num_samples},
          {"num_conditioned", num_conditioned},
          {"median_pt_conditioned", empty_conditioning ? json(nullptr) : json(median_pt_conditioned)},
          {"median_pt_all", median_pt_all},
          {"fraction_low_pt", fraction_low_pt},
          {"empty_conditioning", empty_conditioning}};
}

void ConditionalHistogram::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << "bin_lo,bin_hi,conditional,unconditional\n";
  for (size_t b = 0; b < conditional.size(); ++b) {
    out << b / 10.0 << "," << (b + 1) / 10.0 << "," << conditional[b] << "," << unconditional[b]
        << "\n";
  }
}

std::vector<LikelihoodRecord> likelihood_records(const torch::Tensor& images,
                                                 const torch::Tensor& labels,
                                                 surrogate::LikelihoodModel& S,
                                                 const oracle::ExperimenterProbe& probe,
                                                 int64_t epoch) {
  if (images.size(0) != labels.size(0)) {
    throw DataError("likelihood_records: image/label count mismatch");
  }
  auto idx = labels.to(torch::kInt64).view({-1, 1});
  auto ps = S.likelihoods(images).gather(1, idx).squeeze(1).to(torch::kFloat64);
  auto pt = probe.probabilities(images).gather(1, idx).squeeze(1).to(torch::kFloat64);
  auto psa = ps.accessor<double, 1>();
  auto pta = pt.accessor<double, 1>();
  auto la = labels.to(torch::kInt64).contiguous();
  auto laa = la.accessor<int64_t, 1>();
  std::vector<LikelihoodRecord> out;
  out.reserve(static_cast<size_t>(images.size(0)));
  for (int64_t i = 0; i < images.size(0); ++i) {
    out.push_back({i, laa[i], std::clamp(psa[i], 0.0, 1.0), std::clamp(pta[i], 0.0, 1.0), epoch});
  }
  return out;
}

ConditionalHistogram conditional_pt_histogram(const std::vector<LikelihoodRecord>& records,
                                              double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ConfigError("conditional_pt_histogram: threshold must lie in (0, 1)");
  }
  std::vector<double> all;
  std::vector<double> cond;
  for (const auto& r : records) {
    all.push_back(r.p_t);
    if (r.p_s > threshold) {
      cond.push_back(r.p_t);
    }
  }
  ConditionalHistogram h;
  h.threshold = threshold;
  h.conditional = unit_histogram(cond);
  h.unconditional = unit_histogram(all);
  h.num_samples = static_cast<int64_t>(all.size());
  h.num_conditioned = static_cast<int64_t>(cond.size());
  h.empty_conditioning = cond.empty();
  h.median_pt_conditioned = median(cond);
  h.median_pt_all = median(all);
  h.fraction_low_pt =
      cond.empty() ? 0.0
                   : static_cast<double>(std::count_if(cond.begin(), cond.end(),
                                                       [](double v) { return v < 0.1; })) /
                         static_cast<double>(cond.size());
  return h;
}

ConditionalHistogram conditional_pt_histogram(const torch::Tensor& images,
                                              const torch::Tensor& labels,
                                              surrogate::LikelihoodModel& S,
                                              const oracle::ExperimenterProbe& probe,
                                              double threshold) {
  return conditional_pt_histogram(likelihood_records(images, labels, S, probe), threshold);
}

EasyHardSplit easy_hard_split(const torch::Tensor& embeddings, const torch::Tensor& labels,
                              double rho) {
  if (!(rho > 0.0 && rho < 1.0)) {
    throw ConfigError("easy_hard_split: rho must lie in (0, 1)");
  }
  auto emb = embeddings.to(torch::kFloat64).contiguous();
  auto lab = labels.to(torch::kInt64).contiguous();
  auto ea = emb.accessor<double, 2>();
  auto la = lab.accessor<int64_t, 1>();
  const auto n = emb.size(0);
  const auto d = emb.size(1);
  std::map<int64_t, std::vector<int64_t>> members;
  for (int64_t i = 0; i < n; ++i) {
    members[la[i]].push_back(i);
  }
  EasyHardSplit s;
  s.rho = rho;
  s.distances.assign(static_cast<size_t>(n), 0.0);
  s.easy.assign(static_cast<size_t>(n), false);
  for (auto& [c, idx] : members) {
    if (idx.size() < 2) {
      throw DataError("easy_hard_split: class " + std::to_string(c) + " has a single sample");
    }
    std::vector<double> centroid(static_cast<size_t>(d), 0.0);
    for (auto i : idx) {
      for (int64_t k = 0; k < d; ++k) {
        centroid[static_cast<size_t>(k)] += ea[i][k];
      }
    }
    for (auto& v : centroid) {
      v /= static_cast<double>(idx.size());
    }
    for (auto i : idx) {
      double sq = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        const double diff = ea[i][k] - centroid[static_cast<size_t>(k)];
        sq += diff * diff;
      }
      s.distances[static_cast<size_t>(i)] = std::sqrt(sq);
    }
    auto order = idx;
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
      return s.distances[static_cast<size_t>(a)] < s.distances[static_cast<size_t>(b)];
    });
    const auto n_easy = static_cast<size_t>(std::ceil(rho * static_cast<double>(idx.size()) - 1e-12));
    for (size_t k = 0; k < n_easy && k < order.size(); ++k) {
      s.easy[static_cast<size_t>(order[k])] = true;
    }
    s.centroids[c] = std::move(centroid);
  }
  return s;
}

std::vector<std::vector<LikelihoodRecord>> track_ps_dynamics(
    const torch::Tensor& images, const torch::Tensor& labels,
    const std::vector<surrogate::Checkpoint>& checkpoints, const oracle::ExperimenterProbe& probe) {
  if (checkpoints.size() < 2) {
    throw ConfigError("track_ps_dynamics needs at least two checkpoints");
  }
  auto idx = labels.to(torch::kInt64).view({-1, 1});
  auto pt = probe.probabilities(images).gather(1, idx).squeeze(1).to(torch::kFloat64).contiguous();
  auto pta = pt.accessor<double, 1>();
  auto la = labels.to(torch::kInt64).contiguous();
  auto laa = la.accessor<int64_t, 1>();
  std::vector<std::vector<LikelihoodRecord>> out;
  for (const auto& ck : checkpoints) {
    if (ck.model->input_shape() !=
        ImageShape{images.size(2), images.size(3), images.size(1)}) {
      throw DataError("track_ps_dynamics: checkpoint input shape differs from the samples");
    }
    auto ps = ck.model->likelihoods(images).gather(1, idx).squeeze(1).to(torch::kFloat64).contiguous();
    auto psa = ps.accessor<double, 1>();
    std::vector<LikelihoodRecord> recs;
    recs.reserve(static_cast<size_t>(images.size(0)));
    for (int64_t i = 0; i < images.size(0); ++i) {
      recs.push_back({i, laa[i], psa[i], pta[i], ck.epoch});
    }
    out.push_back(std::move(recs));
  }
  return out;
}

json DynamicsSummary::to_json() const {
  return {{"epochs", epochs}, {"easy_mean_ps", easy_mean_ps}, {"hard_mean_ps", hard_mean_ps}};
}

void DynamicsSummary::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  out << "epoch,easy_mean_ps,hard_mean_ps\n";
  for (size_t i = 0; i < epochs.size(); ++i) {
    out << epochs[i] << "," << easy_mean_ps[i] << "," << hard_mean_ps[i] << "\n";
  }
}

DynamicsSummary summarize_dynamics(const std::vector<std::vector<LikelihoodRecord>>& dynamics,
                                   const EasyHardSplit& split) {
  DynamicsSummary s;
  for (const auto& recs : dynamics) {
    if (recs.size() != split.easy.size()) {
      throw DataError("summarize_dynamics: split and records differ in size");
    }
    double e = 0, h = 0;
    int64_t ne = 0, nh = 0;
    for (const auto& r : recs) {
      if (split.easy[static_cast<size_t>(r.sample_id)]) {
        e += r.p_s;
        ++ne;
      } else {
        h += r.p_s;
        ++nh;
      }
    }
    s.epochs.push_back(recs.empty() ? 0 : recs.front().epoch);
    s.easy_mean_ps.push_back(ne ? e / static_cast<double>(ne) : 0.0);
    s.hard_mean_ps.push_back(nh ? h / static_cast<double>(nh) : 0.0);
  }
  return s;
}

}  // namespace lokt::analysis
