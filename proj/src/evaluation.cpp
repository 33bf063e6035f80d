#include "lokt/evaluation.hpp"

#include "lokt/digest.hpp"
#include "lokt/training.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

namespace lokt::eval {
using nlohmann::json;

torch::Tensor EvaluationModel::features(const torch::Tensor& images) const {
  return nn::predict_features(*net, images);
}

torch::Tensor EvaluationModel::predict(const torch::Tensor& images) const {
  return oracle::argmax_lowest(nn::predict_logits(*net, images));
}

EvaluationModel train_eval_model(const torch::Tensor& images, const torch::Tensor& labels,
                                 const torch::Tensor& val_images, const torch::Tensor& val_labels,
                                 int64_t num_classes, const std::string& architecture_id,
                                 const std::string& target_architecture,
                                 const oracle::TrainConfig& cfg) {
  if (architecture_id == target_architecture) {
    throw ConfigError("evaluation model must not share the target architecture '" +
                      architecture_id + "'");
  }
  torch::manual_seed(cfg.seed);
  const ImageShape shape{images.size(2), images.size(3), images.size(1)};
  auto net = nn::make_classifier(architecture_id, num_classes, shape);
  auto fit = train::fit_classifier(*net, images, labels, cfg);
  EvaluationModel e{net, {}};
  e.manifest = {{"architecture_id", architecture_id},
                {"target_architecture", target_architecture},
                {"num_classes", num_classes},
                {"image_shape", {shape.height, shape.width, shape.channels}},
                {"train_config", cfg.to_json()},
                {"seed", cfg.seed},
                {"train_accuracy", fit.train_accuracy},
                {"val_accuracy", val_images.size(0) > 0
                                     ? train::accuracy(*net, val_images, val_labels)
                                     : 0.0}};
  return e;
}

void save_eval_model(const EvaluationModel& e, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_module(*e.net, dir / "model.pt");
  auto m = e.manifest;
  std::ifstream w(dir / "model.pt", std::ios::binary);
  std::stringstream bytes;
  bytes << w.rdbuf();
  m["weights_digest"] = sha256_hex(bytes.str());
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

EvaluationModel load_eval_model(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw PrerequisiteError("missing evaluation model " + (dir / "manifest.json").string());
  }
  EvaluationModel e;
  e.manifest = json::parse(in);
  auto s = e.manifest.at("image_shape").get<std::vector<int64_t>>();
  e.net = nn::make_classifier(e.manifest.at("architecture_id"),
                              e.manifest.at("num_classes").get<int64_t>(), {s[0], s[1], s[2]});
  nn::load_module(*e.net, dir / "model.pt");
  e.net->eval();
  return e;
}

AccuracyFragment attack_accuracy(const std::vector<inversion::ReconstructionSet>& selected,
                                 const EvaluationModel& E, int64_t num_classes) {
  std::vector<const inversion::ReconstructionSet*> by_class(static_cast<size_t>(num_classes), nullptr);
  for (const auto& s : selected) {
    if (s.target_class < 0 || s.target_class >= num_classes) {
      throw DataError("reconstruction set for an unknown class");
    }
    by_class[static_cast<size_t>(s.target_class)] = &s;
  }
  AccuracyFragment f;
  for (int64_t c = 0; c < num_classes; ++c) {
    const auto* s = by_class[static_cast<size_t>(c)];
    if (s == nullptr || s->candidates.empty()) {
      throw DataError("attack_accuracy: class " + std::to_string(c) + " has no reconstruction");
    }
    auto pred = E.predict(s->images());
    const auto hits = pred.eq(c).sum().item<int64_t>();
    f.per_class.push_back(100.0 * static_cast<double>(hits) /
                          static_cast<double>(s->candidates.size()));
  }
  f.mean = std::accumulate(f.per_class.begin(), f.per_class.end(), 0.0) /
           static_cast<double>(num_classes);
  return f;
}

std::vector<double> min_distances(const torch::Tensor& a, const torch::Tensor& b) {
  if (b.size(0) == 0) {
    throw DataError("min_distances: empty reference set");
  }
  auto A = a.to(torch::kFloat64).contiguous();
  auto Bm = b.to(torch::kFloat64).contiguous();
  auto aa = A.accessor<double, 2>();
  auto ba = Bm.accessor<double, 2>();
  std::vector<double> out;
  out.reserve(static_cast<size_t>(A.size(0)));
  for (int64_t i = 0; i < A.size(0); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int64_t j = 0; j < Bm.size(0); ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < A.size(1); ++k) {
        const double d = aa[i][k] - ba[j][k];
        s += d * d;
      }
      best = std::min(best, s);
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

KnnFragment knn_distance(const std::vector<inversion::ReconstructionSet>& recons,
                         const torch::Tensor& private_images, const torch::Tensor& private_labels,
                         const EvaluationModel& E) {
  KnnFragment f;
  auto priv_feat = E.features(private_images);
  for (const auto& s : recons) {
    auto mask = private_labels.eq(s.target_class);
    if (mask.sum().item<int64_t>() == 0) {
      throw DataError("knn_distance: no private images for class " +
                      std::to_string(s.target_class));
    }
    if (s.candidates.empty()) {
      throw DataError("knn_distance: empty reconstruction set");
    }
    auto d = min_distances(E.features(s.images()), priv_feat.index({mask}));
    f.per_class.push_back(std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size()));
  }
  f.mean = f.per_class.empty() ? 0.0
                               : std::accumulate(f.per_class.begin(), f.per_class.end(), 0.0) /
                                     static_cast<double>(f.per_class.size());
  return f;
}

json MetricRow::to_json() const {
  return {{"setup", setup},
          {"attack", attack},
          {"surrogate_design", surrogate_design},
          {"attack_acc_mean", attack_acc_mean},
          {"attack_acc_std", attack_acc_std},
          {"knn_mean", knn_mean},
          {"queries_total", queries_total},
          {"per_class_acc", per_class_acc},
          {"per_class_knn", per_class_knn},
          {"seed_acc", seed_acc},
          {"metadata", metadata.is_null() ? json::object() : metadata}};
}

MetricRow MetricRow::from_json(const json& j) {
  MetricRow r;
  r.setup = j.at("setup");
  r.attack = j.at("attack");
  r.surrogate_design = j.at("surrogate_design");
  r.attack_acc_mean = j.at("attack_acc_mean");
  r.attack_acc_std = j.at("attack_acc_std");
  r.knn_mean = j.at("knn_mean");
  r.queries_total = j.at("queries_total");
  r.per_class_acc = j.value("per_class_acc", std::vector<double>{});
  r.per_class_knn = j.value("per_class_knn", std::vector<double>{});
  r.seed_acc = j.value("seed_acc", std::vector<double>{});
  r.metadata = j.value("metadata", json::object());
  return r;
}

MetricRow aggregate(const std::string& setup, const std::string& attack, const std::string& design,
                    const std::vector<AccuracyFragment>& acc, const std::vector<KnnFragment>& knn,
                    int64_t queries_total) {
  if (acc.empty()) {
    throw DataError("aggregate: no accuracy fragments");
  }
  MetricRow r;
  r.setup = setup;
  r.attack = attack;
  r.surrogate_design = design;
  r.queries_total = queries_total;
  for (const auto& a : acc) {
    r.seed_acc.push_back(a.mean);
  }
  const double n = static_cast<double>(acc.size());
  r.attack_acc_mean = std::accumulate(r.seed_acc.begin(), r.seed_acc.end(), 0.0) / n;
  double var = 0.0;
  for (double v : r.seed_acc) {
    var += (v - r.attack_acc_mean) * (v - r.attack_acc_mean);
  }
  r.attack_acc_std = std::sqrt(var / n);
  r.per_class_acc.assign(acc.front().per_class.size(), 0.0);
  for (const auto& a : acc) {
    for (size_t c = 0; c < a.per_class.size(); ++c) {
      r.per_class_acc[c] += a.per_class[c] / n;
    }
  }
  if (!knn.empty()) {
    r.per_class_knn.assign(knn.front().per_class.size(), 0.0);
    for (const auto& k : knn) {
      r.knn_mean += k.mean / static_cast<double>(knn.size());
      for (size_t c = 0; c < k.per_class.size(); ++c) {
        r.per_class_knn[c] += k.per_class[c] / static_cast<double>(knn.size());
      }
    }
  }
  return r;
}

const MetricRow* MetricReport::find(const std::string& attack, const std::string& design) const {
  for (const auto& r : rows) {
    if (r.attack == attack && r.surrogate_design == design) {
      return &r;
    }
  }
  return nullptr;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "setup,attack,surrogate_design,attack_acc_mean,attack_acc_std,knn_mean,queries_total\n";
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.setup << "," << r.attack << "," << r.surrogate_design << "," << std::setprecision(2)
        << r.attack_acc_mean << "," << r.attack_acc_std << "," << std::setprecision(4) << r.knn_mean
        << "," << r.queries_total << "\n";
  }
  return out.str();
}

json MetricReport::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back(r.to_json());
  }
  return {{"rows", rows_j}};
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  for (const auto& row : j.at("rows")) {
    r.rows.push_back(MetricRow::from_json(row));
  }
  return r;
}

void MetricReport::save(const std::filesystem::path& csv, const std::filesystem::path& json_path) const {
  std::ofstream(csv) << to_csv();
  std::ofstream(json_path) << to_json().dump(2) << "\n";
}

}  // namespace lokt::eval
