#pragma once

#include "lokt/baselines.hpp"
#include "lokt/datasets.hpp"
#include "lokt/evaluation.hpp"
#include "lokt/inversion.hpp"
#include "lokt/oracle.hpp"
#include "lokt/tacgan.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lokt::pipeline {

/// Environment variable that relocates every output directory.
inline constexpr const char* kOutputRootEnv = "LOKT_OUTPUT_ROOT";

enum class Stage {
  PrepareData,
  TrainTarget,
  TrainTacgan,
  TrainSurrogate,
  RunBaseline,
  Attack,
  Evaluate,
  Analyze,
  Report
};

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);
const std::vector<Stage>& all_stages();

struct SurrogateSpec {
  int64_t per_class = 500;
  std::vector<std::string> architectures{"densenet-s", "densenet-m", "densenet-l"};
  /// The single surrogate S; must be one of `architectures`.
  std::string primary = "densenet-m";
  oracle::TrainConfig train;
};

struct AttackSpec {
  inversion::InversionConfig conditional;
  inversion::InversionConfig prior;
  std::vector<uint64_t> seeds{0, 1, 2};
  /// Reconstructions per class kept for attack accuracy.
  int64_t select = 1;
};

struct AnalysisSpec {
  bool enabled = true;
  double threshold = 0.9;
  int64_t num_samples = 10000;
  double rho = 0.7;
};

struct ExperimentConfig {
  std::string name = "desk";
  std::filesystem::path output_dir = "runs/desk";
  uint64_t seed = 0;
  std::filesystem::path registry;  // optional dataset registry file
  std::string private_dataset = "glyph-digits";
  data::SplitPolicy split;
  std::string target_architecture = "cnn-t";
  oracle::TrainConfig target_train;
  std::string eval_architecture = "cnn-e";
  oracle::TrainConfig eval_train;
  gan::GanTrainConfig tacgan;
  gan::GanTrainConfig prior_gan;
  SurrogateSpec surrogates;
  std::vector<baselines::BaselineSpec> baselines;
  AttackSpec attacks;
  AnalysisSpec analysis;

  nlohmann::json raw;  // as parsed, defaults filled in

  /// Validates architecture ids and nested configs.
  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// SHA-256 of the canonical (key-sorted, compact) JSON of to_json() minus
  /// output_dir; the result does not depend on field order in the source
  /// file or on where outputs are written.
  std::string digest() const;
};

/// Reads a JSON config; relative paths resolve against the file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);

struct RunOptions {
  bool overwrite = false;
  std::optional<uint64_t> seed;
  /// Overrides kOutputRootEnv when set.
  std::optional<std::filesystem::path> output_root;
  bool verbose = true;
  /// Skip stages whose artifacts already carry the current config digest.
  bool resume = false;
};

/// Orchestrates the stages over one output directory. Holds the directory
/// lock for its lifetime.
class Pipeline {
 public:
  Pipeline(ExperimentConfig cfg, RunOptions opts = {});
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void run(Stage stage);
  void run_all();

  const std::filesystem::path& output_dir() const { return out_; }
  const ExperimentConfig& config() const { return cfg_; }
  std::string config_digest() const { return digest_; }

  /// Sum of the per-stage ledger contributions recorded so far.
  oracle::QueryLedger ledger() const;

 private:
  struct Context;

  void prepare_data();
  void train_target();
  void train_tacgan();
  void train_surrogate();
  void run_baselines();
  void attack();
  void evaluate();
  void analyze();
  void report();

  void require(Stage prerequisite, const std::string& artifact) const;
  void begin_stage(Stage s);
  void finish_stage(Stage s, const nlohmann::json& artifacts, const oracle::QueryLedger& delta);
  std::filesystem::path stage_dir(Stage s) const;
  void log(const std::string& msg) const;

  ExperimentConfig cfg_;
  RunOptions opts_;
  std::filesystem::path out_;
  std::string digest_;
  std::filesystem::path lock_path_;
};

/// Stage output directories, relative to the output root.
std::filesystem::path stage_subdir(Stage s);

}  // namespace lokt::pipeline
