#pragma once

#include "lokt/models.hpp"
#include "lokt/surrogate.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace lokt::inversion {

enum class Style { ConditionalAscent, PriorRegularized };
std::string to_string(Style s);
Style style_from_string(const std::string& s);

struct InversionConfig {
  Style style = Style::ConditionalAscent;
  int64_t steps = 600;
  double step_size = 0.002;
  /// λ of the realness term; prior-regularized style only.
  double prior_weight = 0.0;
  int64_t candidates_per_class = 5;
  /// "adam" or "sgd" (with `momentum`).
  std::string optimizer = "adam";
  double momentum = 0.9;
  /// Latents are projected back into the ball of radius factor * sqrt(d_z).
  double radius_factor = 3.0;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static InversionConfig from_json(const nlohmann::json& j);

  /// Adam, lr 0.002, 600 steps.
  static InversionConfig conditional_defaults();
  /// SGD with momentum, lr 0.02, 2400 steps.
  static InversionConfig prior_defaults(double prior_weight);
};

struct Candidate {
  int64_t index = 0;
  torch::Tensor latent;  // (d_z,)
  torch::Tensor image;   // (C, H, W)
  double final_likelihood = 0.0;
  std::vector<double> trajectory;  // steps + 1 likelihood values
  bool aborted = false;            // objective became non-finite
};

struct ReconstructionSet {
  int64_t target_class = 0;
  std::vector<Candidate> candidates;

  torch::Tensor images() const;  // (n, C, H, W)
  std::string digest() const;
};

/// Ascends log P_S(y | G(z, y)) over z with the label fixed. Opens an attack
/// phase for its duration; no oracle is involved.
ReconstructionSet invert_conditional(nn::LatentGenerator& G, surrogate::LikelihoodModel& S,
                                     int64_t y, const InversionConfig& cfg);

/// Minimizes -log P_S(y | G(z)) - λ D_src(G(z)). G is evaluated with label 0
/// (an unconditional prior). With λ = 0 the realness term is skipped
/// entirely, so the update is exactly plain likelihood ascent.
ReconstructionSet invert_prior_regularized(nn::LatentGenerator& G, nn::SourceCritic& D,
                                           surrogate::LikelihoodModel& S, int64_t y,
                                           const InversionConfig& cfg);

/// Dispatches on cfg.style for classes 0..N-1. `D` may be null for the
/// conditional style.
std::vector<ReconstructionSet> attack_all_classes(nn::LatentGenerator& G, nn::SourceCritic* D,
                                                  surrogate::LikelihoodModel& S,
                                                  const InversionConfig& cfg);

/// Top-n candidates by final likelihood, descending; ties keep the lower
/// candidate index first.
ReconstructionSet select_final(const ReconstructionSet& recons, int64_t n);

/// latents.pt / images.pt tensors, trajectories.csv and a PNG grid per class.
void save_reconstructions(const std::vector<ReconstructionSet>& sets,
                          const std::filesystem::path& dir);
std::vector<ReconstructionSet> load_reconstructions(const std::filesystem::path& dir);

}  // namespace lokt::inversion
