#pragma once

#include "lokt/common.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace lokt::oracle {
class HardLabelOracle;
}

namespace lokt::data {

struct LabeledImages {
  torch::Tensor images;  // (B, C, H, W) float in [-1, 1]
  torch::Tensor labels;  // (B,) int64

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

/// One entry of the dataset registry.
///
/// Supported kinds:
///   glyph  options: set = digits | letters | symbols | symbols-d2, size = 16
///   idx    options: images = <path>, labels = <path>  (MNIST-style IDX files;
///          relative paths resolve against the registry file's directory)
struct DatasetEntry {
  std::string id;
  std::string kind;
  std::map<std::string, std::string> options;
};

class DatasetRegistry {
 public:
  /// glyph-digits, glyph-letters, glyph-symbols, glyph-symbols-d2.
  static DatasetRegistry builtin();
  /// Parses an INI-style registry ("[id]" sections of "key = value" lines,
  /// '#' comments). Entries are added on top of the builtin ones.
  static DatasetRegistry from_file(const std::filesystem::path& path);
  static DatasetRegistry parse(std::string_view text,
                               const std::filesystem::path& base_dir = {});

  void add(DatasetEntry entry);
  bool contains(const std::string& id) const;
  const DatasetEntry& at(const std::string& id) const;
  std::vector<std::string> ids() const;

  int64_t num_classes(const std::string& id) const;

  /// Materializes samples of `classes` (all classes when empty). Procedural
  /// sources render exactly `per_class` samples per class; file-backed sources
  /// return at most `per_class` (all when per_class < 0) in file order.
  LabeledImages load(const std::string& id, const std::vector<int64_t>& classes,
                     int64_t per_class, uint64_t seed) const;

 private:
  std::map<std::string, DatasetEntry> entries_;
};

/// Reads an IDX3 (uint8 images) / IDX1 (uint8 or int32 labels) pair and maps
/// pixels to [-1, 1]. write_idx switches to int32 labels above 255.
LabeledImages read_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
void write_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
               const torch::Tensor& pixels_u8, const torch::Tensor& labels_int);

struct SplitPolicy {
  /// Classes of the private dataset that become private identities 0..N-1 (in
  /// the listed order). Empty selects every class.
  std::vector<int64_t> private_classes;
  /// Training samples per private class; negative keeps every available one.
  int64_t private_per_class = 500;
  /// Held-out samples per private class, used for validation accuracy only.
  int64_t holdout_per_class = 100;
  /// Companion dataset supplying the public images. Empty means the private
  /// dataset itself, in which case public classes must be disjoint from the
  /// private ones.
  std::string public_dataset;
  std::vector<int64_t> public_classes;
  /// Number of public images; negative keeps every available one.
  int64_t public_size = 6000;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SplitPolicy from_json(const nlohmann::json& j);
};

struct DatasetSplit {
  torch::Tensor private_images;
  torch::Tensor private_labels;
  torch::Tensor holdout_images;
  torch::Tensor holdout_labels;
  /// Public images carry no labels at all.
  torch::Tensor public_images;
  int64_t num_private_classes = 0;
  ImageShape image_shape;
  PixelRange pixel_range;

  std::string digest() const;
};

/// Deterministic given (registry, dataset_id, policy).
DatasetSplit load_and_split(const DatasetRegistry& registry, const std::string& dataset_id,
                            const SplitPolicy& policy);

enum class LabelSource { PublicRelabeled, Synthetic };

std::string to_string(LabelSource s);
LabelSource label_source_from_string(const std::string& s);

struct PseudoLabeledDataset {
  torch::Tensor images;
  torch::Tensor labels;
  LabelSource source = LabelSource::PublicRelabeled;
  int64_t num_classes = 0;
  std::vector<int64_t> class_histogram;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }

  /// Validates labels and fills in the histogram.
  static PseudoLabeledDataset make(torch::Tensor images, torch::Tensor labels, LabelSource source,
                                   int64_t num_classes);
};

/// One oracle query per public image, charged to the public-relabeling phase.
PseudoLabeledDataset build_pseudo_labeled_public(const torch::Tensor& public_images,
                                                 oracle::HardLabelOracle& oracle,
                                                 int64_t batch_size = 256);

/// Label-preserving image transforms used to rebalance pseudo-labeled data.
struct AugmentationPolicy {
  int64_t max_shift = 1;  // crop-style translation in pixels
  bool horizontal_flip = false;
  double contrast_jitter = 0.1;
  double noise_std = 0.05;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static AugmentationPolicy from_json(const nlohmann::json& j);
};

struct CoverageReport {
  std::vector<int64_t> histogram_before;
  std::vector<int64_t> histogram_after;
  /// Classes that had no sample to augment from; they stay empty.
  std::vector<int64_t> empty_classes;
};

struct BalancedDataset {
  PseudoLabeledDataset dataset;
  CoverageReport coverage;
};

/// Tops every non-empty class up to `target_per_class` with augmented copies
/// of its own samples. Never queries the oracle.
BalancedDataset balance_by_augmentation(const PseudoLabeledDataset& ds, int64_t target_per_class,
                                        const AugmentationPolicy& policy);

double coefficient_of_variation(const std::vector<int64_t>& histogram);

std::vector<int64_t> histogram(const torch::Tensor& labels, int64_t num_classes);

// Container format: <name>.bin holds raw float32 samples back to back,
// <name>.index.csv one row per sample (offset,label,source) and
// <name>.manifest.json the shape, source, digests plus caller metadata.
void save_pseudo_labeled(const PseudoLabeledDataset& ds, const std::filesystem::path& dir,
                         const std::string& name, const nlohmann::json& metadata = {});
PseudoLabeledDataset load_pseudo_labeled(const std::filesystem::path& dir,
                                         const std::string& name);

void save_split(const DatasetSplit& split, const std::filesystem::path& dir,
                const nlohmann::json& metadata = {});
DatasetSplit load_split(const std::filesystem::path& dir);

}  // namespace lokt::data
