#include "lokt/surrogate.hpp"

#include "lokt/digest.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace lokt::surrogate {
using nlohmann::json;

torch::Tensor LikelihoodModel::likelihoods(const torch::Tensor& images, int64_t chunk) {
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < images.size(0); i += chunk) {
    out.push_back(log_probs(images.slice(0, i, std::min(images.size(0), i + chunk))).exp());
  }
  if (out.empty()) {
    return torch::empty({0, num_classes()});
  }
  return torch::cat(out);
}

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::CdHead:
      return "cd_head";
    case Provenance::SyntheticTrained:
      return "synthetic_trained";
    case Provenance::PublicTrained:
      return "public_trained";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  for (auto p : {Provenance::CdHead, Provenance::SyntheticTrained, Provenance::PublicTrained}) {
    if (to_string(p) == s) {
      return p;
    }
  }
  throw DataError("unknown provenance '" + s + "'");
}

SurrogateModel::SurrogateModel(std::shared_ptr<nn::ClassifierNet> net, Provenance provenance,
                               json manifest)
    : net_(std::move(net)), provenance_(provenance), manifest_(std::move(manifest)) {
  if (!net_) {
    throw ConfigError("surrogate without a network");
  }
  net_->eval();
  if (!manifest_.is_object()) {
    manifest_ = json::object();
  }
  manifest_["architecture_id"] = net_->architecture_id();
  manifest_["provenance"] = to_string(provenance_);
  manifest_["num_classes"] = net_->num_classes();
}

torch::Tensor SurrogateModel::log_probs(const torch::Tensor& images) {
  return torch::log_softmax(net_->forward(images), 1);
}

torch::Tensor SurrogateModel::probabilities(const torch::Tensor& images) {
  return torch::softmax(nn::predict_logits(*net_, images), 1);
}

torch::Tensor SurrogateEnsemble::log_probs(const torch::Tensor& images) {
  auto acc = members_.front()->log_probs(images);
  for (size_t i = 1; i < members_.size(); ++i) {
    acc = acc + members_[i]->log_probs(images);
  }
  return acc / static_cast<double>(members_.size());
}

std::string SurrogateEnsemble::id() const {
  std::string s = "ensemble(";
  for (size_t i = 0; i < members_.size(); ++i) {
    s += (i ? "," : "") + members_[i]->id();
  }
  return s + ")";
}

SurrogateEnsemble build_ensemble(std::vector<std::shared_ptr<SurrogateModel>> models) {
  if (models.size() < 2) {
    throw ConfigError("an ensemble needs at least two surrogates");
  }
  std::set<std::string> ids;
  for (const auto& m : models) {
    if (!m) {
      throw ConfigError("null ensemble member");
    }
    if (m->num_classes() != models.front()->num_classes()) {
      throw ConfigError("ensemble members disagree on the number of classes");
    }
    if (m->input_shape() != models.front()->input_shape()) {
      throw ConfigError("ensemble members disagree on the input shape");
    }
    if (!ids.insert(m->id()).second) {
      throw ConfigError("ensemble members must have distinct architectures; '" + m->id() +
                        "' repeats");
    }
  }
  std::sort(models.begin(), models.end(),
            [](const auto& a, const auto& b) { return a->id() < b->id(); });
  SurrogateEnsemble e;
  e.members_ = std::move(models);
  return e;
}

std::shared_ptr<SurrogateModel> extract_cd(std::shared_ptr<nn::Discriminator> disc) {
  if (!disc || disc->trained_iterations() <= 0) {
    throw PrerequisiteError("extract_cd: discriminator has no completed training iterations");
  }
  json m = {{"source_iterations", disc->trained_iterations()},
            {"hidden", disc->architecture().hidden},
            {"blocks", disc->architecture().blocks}};
  return std::make_shared<SurrogateModel>(std::make_shared<nn::CDClassifier>(std::move(disc)),
                                          Provenance::CdHead, m);
}

data::PseudoLabeledDataset generate_fake_dataset(nn::Generator& G, oracle::HardLabelOracle& oracle,
                                                 int64_t per_class, uint64_t seed,
                                                 const std::filesystem::path& progress_manifest,
                                                 int64_t batch_size) {
  if (per_class < 1) {
    throw ConfigError("generate_fake_dataset: per_class must be >= 1");
  }
  const auto n_cls = oracle.num_classes();
  if (G.num_classes() != n_cls) {
    throw ConfigError("generator and oracle disagree on the number of classes");
  }
  const auto total = n_cls * per_class;
  auto gen = make_generator(seed);
  auto y_all = torch::arange(total, torch::kInt64).remainder(n_cls);
  auto z_all = torch::randn({total, G.latent_dim()}, gen);
  G.eval();
  std::vector<torch::Tensor> images;
  std::vector<torch::Tensor> labels;
  int64_t done = 0;
  try {
    for (; done < total; done += batch_size) {
      const auto end = std::min(total, done + batch_size);
      torch::Tensor x;
      {
        torch::NoGradGuard ng;
        x = G.forward(z_all.slice(0, done, end), y_all.slice(0, done, end));
      }
      labels.push_back(oracle.query(x, oracle::QueryPhase::SyntheticLabeling));
      images.push_back(x);
    }
  } catch (const std::exception& e) {
    if (!progress_manifest.empty()) {
      std::filesystem::create_directories(progress_manifest.parent_path());
      std::ofstream(progress_manifest) << json{{"requested", total},
                                               {"completed", done},
                                               {"per_class", per_class},
                                               {"seed", seed},
                                               {"error", e.what()}}
                                              .dump(2)
                                       << "\n";
    }
    throw;
  }
  return data::PseudoLabeledDataset::make(torch::cat(images), torch::cat(labels),
                                          data::LabelSource::Synthetic, n_cls);
}

std::shared_ptr<nn::ClassifierNet> make_surrogate_net(const std::string& architecture_id,
                                                      int64_t num_classes, const ImageShape& shape,
                                                      const nn::GanArchitecture& cd_arch) {
  if (architecture_id == "cd-head") {
    return std::make_shared<nn::CDClassifier>(
        std::make_shared<nn::Discriminator>(num_classes, shape, cd_arch));
  }
  return nn::make_classifier(architecture_id, num_classes, shape);
}

std::shared_ptr<nn::ClassifierNet> clone_classifier(nn::ClassifierNet& net) {
  nn::GanArchitecture arch;
  if (auto* cd = dynamic_cast<nn::CDClassifier*>(&net)) {
    arch = cd->discriminator()->architecture();
  }
  auto copy = make_surrogate_net(net.architecture_id(), net.num_classes(), net.input_shape(), arch);
  std::stringstream buf;
  {
    torch::serialize::OutputArchive out;
    net.save(out);
    out.save_to(buf);
  }
  torch::serialize::InputArchive in;
  in.load_from(buf);
  copy->load(in);
  copy->eval();
  return copy;
}

std::shared_ptr<SurrogateModel> train_surrogate(const data::PseudoLabeledDataset& ds,
                                                const std::string& architecture_id,
                                                const oracle::TrainConfig& cfg,
                                                std::vector<Checkpoint>* checkpoints,
                                                const nn::GanArchitecture& cd_arch) {
  if (ds.size() == 0) {
    throw DataError("train_surrogate: empty dataset");
  }
  torch::manual_seed(cfg.seed);
  const ImageShape shape{ds.images.size(2), ds.images.size(3), ds.images.size(1)};
  auto net = make_surrogate_net(architecture_id, ds.num_classes, shape, cd_arch);
  const auto provenance = ds.source == data::LabelSource::Synthetic ? Provenance::SyntheticTrained
                                                                     : Provenance::PublicTrained;
  train::EpochHook hook;
  if (checkpoints != nullptr) {
    hook = [&](int64_t epoch, nn::ClassifierNet& n) {
      checkpoints->push_back(
          {epoch, std::make_shared<SurrogateModel>(clone_classifier(n), provenance,
                                                   json{{"epoch", epoch}})});
    };
  }
  auto fit = train::fit_classifier(*net, ds.images, ds.labels, cfg, hook);
  json m = {{"train_config", cfg.to_json()},
            {"pseudo_label_train_accuracy", fit.train_accuracy},
            {"final_loss", fit.final_loss},
            {"dataset_size", ds.size()},
            {"dataset_source", data::to_string(ds.source)},
            {"dataset_digest", Sha256().update(ds.images).update(ds.labels).hex()}};
  if (architecture_id == "cd-head") {
    m["hidden"] = cd_arch.hidden;
    m["blocks"] = cd_arch.blocks;
  }
  return std::make_shared<SurrogateModel>(net, provenance, m);
}

void save_surrogate(const SurrogateModel& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nn::save_module(*s.net(), dir / "model.pt");
  auto m = s.manifest();
  const auto shape = s.input_shape();
  m["image_shape"] = {shape.height, shape.width, shape.channels};
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

std::shared_ptr<SurrogateModel> load_surrogate(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) {
    throw PrerequisiteError("missing surrogate checkpoint " + (dir / "manifest.json").string());
  }
  auto m = json::parse(in);
  auto s = m.at("image_shape").get<std::vector<int64_t>>();
  nn::GanArchitecture arch;
  arch.hidden = m.value("hidden", arch.hidden);
  arch.blocks = m.value("blocks", arch.blocks);
  auto net = make_surrogate_net(m.at("architecture_id"), m.at("num_classes").get<int64_t>(),
                                {s[0], s[1], s[2]}, arch);
  nn::load_module(*net, dir / "model.pt");
  return std::make_shared<SurrogateModel>(net, provenance_from_string(m.at("provenance")), m);
}

}  // namespace lokt::surrogate
