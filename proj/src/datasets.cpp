#include "lokt/datasets.hpp"

#include "lokt/digest.hpp"
#include "lokt/glyphs.hpp"
#include "lokt/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace lokt::data {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) {
    return {};
  }
  auto e = s.find_last_not_of(ws);
  return std::string(s.substr(b, e - b + 1));
}

uint32_t read_be32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (!in) {
    throw DataError("idx: truncated header");
  }
  return (uint32_t{b[0]} << 24U) | (uint32_t{b[1]} << 16U) | (uint32_t{b[2]} << 8U) | b[3];
}

void write_be32(std::ostream& out, uint32_t v) {
  std::array<char, 4> b{static_cast<char>(v >> 24U), static_cast<char>(v >> 16U),
                        static_cast<char>(v >> 8U), static_cast<char>(v)};
  out.write(b.data(), 4);
}

// Selects up to `limit` indices per class (all when limit < 0), preserving
// the order of `order`.
std::vector<int64_t> take_per_class(const torch::Tensor& labels, const std::vector<int64_t>& order,
                                    int64_t cls, int64_t skip, int64_t limit) {
  auto lab = labels.accessor<int64_t, 1>();
  std::vector<int64_t> out;
  int64_t seen = 0;
  for (auto i : order) {
    if (lab[i] != cls) {
      continue;
    }
    if (seen++ < skip) {
      continue;
    }
    if (limit >= 0 && static_cast<int64_t>(out.size()) >= limit) {
      break;
    }
    out.push_back(i);
  }
  return out;
}

torch::Tensor index_tensor(const std::vector<int64_t>& idx) {
  return torch::tensor(idx, torch::kInt64);
}

std::vector<int64_t> shuffled_order(int64_t n, uint64_t seed) {
  auto gen = make_generator(seed);
  auto perm = torch::randperm(n, gen, torch::kInt64);
  return {perm.data_ptr<int64_t>(), perm.data_ptr<int64_t>() + n};
}

void write_container(const fs::path& dir, const std::string& name, const torch::Tensor& images,
                     const std::vector<std::string>& labels, const std::vector<std::string>& tags,
                     json manifest) {
  fs::create_directories(dir);
  auto flat = images.contiguous().to(torch::kFloat32);
  const auto sample_bytes = static_cast<int64_t>(flat.numel() > 0 ? flat[0].numel() * 4 : 0);
  {
    std::ofstream bin(dir / (name + ".bin"), std::ios::binary);
    bin.write(static_cast<const char*>(flat.data_ptr()),
              static_cast<std::streamsize>(flat.numel() * 4));
  }
  {
    std::ofstream idx(dir / (name + ".index.csv"));
    idx << "offset,label,source\n";
    for (size_t i = 0; i < labels.size(); ++i) {
      idx << static_cast<int64_t>(i) * sample_bytes << "," << labels[i] << "," << tags[i] << "\n";
    }
  }
  manifest["num_samples"] = flat.size(0);
  manifest["sample_shape"] = std::vector<int64_t>(flat.sizes().begin() + 1, flat.sizes().end());
  manifest["images_digest"] = tensor_digest(flat);
  std::ofstream(dir / (name + ".manifest.json")) << manifest.dump(2) << "\n";
}

struct Container {
  torch::Tensor images;
  std::vector<std::string> labels;
  std::vector<std::string> tags;
  json manifest;
};

Container read_container(const fs::path& dir, const std::string& name) {
  Container c;
  std::ifstream mf(dir / (name + ".manifest.json"));
  if (!mf) {
    throw DataError("missing dataset manifest " + (dir / (name + ".manifest.json")).string());
  }
  c.manifest = json::parse(mf);
  const auto n = c.manifest.at("num_samples").get<int64_t>();
  auto shape = c.manifest.at("sample_shape").get<std::vector<int64_t>>();
  shape.insert(shape.begin(), n);
  c.images = torch::empty(shape, torch::kFloat32);
  std::ifstream bin(dir / (name + ".bin"), std::ios::binary);
  bin.read(static_cast<char*>(c.images.data_ptr()), static_cast<std::streamsize>(c.images.numel() * 4));
  if (!bin) {
    throw DataError("truncated dataset container " + (dir / (name + ".bin")).string());
  }
  if (tensor_digest(c.images) != c.manifest.at("images_digest").get<std::string>()) {
    throw DataError("dataset container digest mismatch for " + name);
  }
  std::ifstream idx(dir / (name + ".index.csv"));
  std::string line;
  std::getline(idx, line);
  while (std::getline(idx, line)) {
    if (line.empty()) {
      continue;
    }
    auto a = line.find(',');
    auto b = line.find(',', a + 1);
    c.labels.push_back(line.substr(a + 1, b - a - 1));
    c.tags.push_back(line.substr(b + 1));
  }
  if (static_cast<int64_t>(c.labels.size()) != n) {
    throw DataError("dataset index row count mismatch for " + name);
  }
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Registry

DatasetRegistry DatasetRegistry::builtin() {
  DatasetRegistry r;
  r.add({"glyph-digits", "glyph", {{"set", "digits"}}});
  r.add({"glyph-letters", "glyph", {{"set", "letters"}}});
  r.add({"glyph-symbols", "glyph", {{"set", "symbols"}}});
  r.add({"glyph-symbols-d2", "glyph", {{"set", "symbols-d2"}}});
  return r;
}

DatasetRegistry DatasetRegistry::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open dataset registry " + path.string());
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path.parent_path());
}

DatasetRegistry DatasetRegistry::parse(std::string_view text, const fs::path& base_dir) {
  auto r = builtin();
  std::istringstream in{std::string(text)};
  std::string raw;
  DatasetEntry cur;
  bool open = false;
  int line_no = 0;
  auto flush = [&] {
    if (!open) {
      return;
    }
    if (cur.kind.empty()) {
      throw ConfigError("dataset '" + cur.id + "' has no kind");
    }
    for (const char* key : {"images", "labels"}) {
      auto it = cur.options.find(key);
      if (it != cur.options.end() && fs::path(it->second).is_relative() && !base_dir.empty()) {
        it->second = (base_dir / it->second).string();
      }
    }
    r.add(cur);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    auto hash = raw.find('#');
    auto line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) {
      continue;
    }
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("registry line " + std::to_string(line_no) + ": malformed section");
      }
      flush();
      cur = DatasetEntry{trim(std::string_view(line).substr(1, line.size() - 2)), "", {}};
      open = true;
      continue;
    }
    auto eq = line.find('=');
    if (!open || eq == std::string::npos) {
      throw ConfigError("registry line " + std::to_string(line_no) + ": expected key = value");
    }
    auto key = trim(std::string_view(line).substr(0, eq));
    auto value = trim(std::string_view(line).substr(eq + 1));
    if (key == "kind") {
      cur.kind = value;
    } else {
      cur.options[key] = value;
    }
  }
  flush();
  return r;
}

void DatasetRegistry::add(DatasetEntry entry) {
  if (entry.kind != "glyph" && entry.kind != "idx") {
    throw ConfigError("dataset '" + entry.id + "': unsupported kind '" + entry.kind + "'");
  }
  entries_[entry.id] = std::move(entry);
}

bool DatasetRegistry::contains(const std::string& id) const { return entries_.count(id) > 0; }

const DatasetEntry& DatasetRegistry::at(const std::string& id) const {
  auto it = entries_.find(id);
  if (it == entries_.end()) {
    throw ConfigError("unknown dataset id '" + id + "'");
  }
  return it->second;
}

std::vector<std::string> DatasetRegistry::ids() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : entries_) {
    out.push_back(k);
  }
  return out;
}

int64_t DatasetRegistry::num_classes(const std::string& id) const {
  const auto& e = at(id);
  if (e.kind == "glyph") {
    return static_cast<int64_t>(glyphs::glyph_set(e.options.at("set")).size());
  }
  auto all = read_idx(e.options.at("images"), e.options.at("labels"));
  return all.labels.numel() == 0 ? 0 : all.labels.max().item<int64_t>() + 1;
}

LabeledImages DatasetRegistry::load(const std::string& id, const std::vector<int64_t>& classes,
                                    int64_t per_class, uint64_t seed) const {
  const auto& e = at(id);
  const auto n_classes = num_classes(id);
  std::vector<int64_t> wanted = classes;
  if (wanted.empty()) {
    wanted.resize(static_cast<size_t>(n_classes));
    std::iota(wanted.begin(), wanted.end(), 0);
  }
  for (auto c : wanted) {
    if (c < 0 || c >= n_classes) {
      throw ConfigError("dataset '" + id + "' has no class " + std::to_string(c));
    }
  }
  if (e.kind == "glyph") {
    if (per_class < 0) {
      throw ConfigError("procedural dataset '" + id + "' needs an explicit per-class count");
    }
    auto all = glyphs::glyph_set(e.options.at("set"));
    std::vector<glyphs::StrokeMask> masks;
    for (auto c : wanted) {
      masks.push_back(all[static_cast<size_t>(c)]);
    }
    glyphs::RenderOptions opts;
    if (auto it = e.options.find("size"); it != e.options.end()) {
      opts.size = std::stoll(it->second);
    }
    auto set = glyphs::render_set(masks, per_class, seed, opts);
    // Map positions back to the original class ids.
    auto lab = set.labels.accessor<int64_t, 1>();
    for (int64_t i = 0; i < set.labels.size(0); ++i) {
      lab[i] = wanted[static_cast<size_t>(lab[i])];
    }
    return {set.images, set.labels};
  }
  auto all = read_idx(e.options.at("images"), e.options.at("labels"));
  std::vector<int64_t> order(static_cast<size_t>(all.size()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int64_t> keep;
  for (auto c : wanted) {
    auto idx = take_per_class(all.labels, order, c, 0, per_class);
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());
  auto it = index_tensor(keep);
  return {all.images.index_select(0, it), all.labels.index_select(0, it)};
}

LabeledImages read_idx(const fs::path& images, const fs::path& labels) {
  std::ifstream im(images, std::ios::binary);
  std::ifstream lb(labels, std::ios::binary);
  if (!im || !lb) {
    throw DataError("cannot open idx files " + images.string() + " / " + labels.string());
  }
  if (read_be32(im) != 0x00000803U) {
    throw DataError("idx: " + images.string() + " is not an idx3-ubyte file");
  }
  const auto n = static_cast<int64_t>(read_be32(im));
  const auto h = static_cast<int64_t>(read_be32(im));
  const auto w = static_cast<int64_t>(read_be32(im));
  const auto label_magic = read_be32(lb);
  if (label_magic != 0x00000801U && label_magic != 0x00000C01U) {
    throw DataError("idx: " + labels.string() + " is not an idx1 ubyte/int file");
  }
  if (static_cast<int64_t>(read_be32(lb)) != n) {
    throw DataError("idx: image/label count mismatch");
  }
  auto raw = torch::empty({n, 1, h, w}, torch::kUInt8);
  im.read(static_cast<char*>(raw.data_ptr()), static_cast<std::streamsize>(raw.numel()));
  torch::Tensor raw_labels;
  if (label_magic == 0x00000801U) {
    raw_labels = torch::empty({n}, torch::kUInt8);
    lb.read(static_cast<char*>(raw_labels.data_ptr()), static_cast<std::streamsize>(n));
  } else {
    raw_labels = torch::empty({n}, torch::kInt64);
    auto acc = raw_labels.accessor<int64_t, 1>();
    for (int64_t i = 0; i < n && lb; ++i) {
      acc[i] = static_cast<int32_t>(read_be32(lb));
    }
  }
  if (!im || !lb) {
    throw DataError("idx: truncated payload");
  }
  return {raw.to(torch::kFloat32).div(255.0).mul(2.0).sub(1.0), raw_labels.to(torch::kInt64)};
}

void write_idx(const fs::path& images, const fs::path& labels, const torch::Tensor& pixels_u8,
               const torch::Tensor& labels_int) {
  auto px = pixels_u8.contiguous().to(torch::kUInt8);
  std::ofstream im(images, std::ios::binary);
  write_be32(im, 0x00000803U);
  write_be32(im, static_cast<uint32_t>(px.size(0)));
  write_be32(im, static_cast<uint32_t>(px.size(-2)));
  write_be32(im, static_cast<uint32_t>(px.size(-1)));
  im.write(static_cast<const char*>(px.data_ptr()), static_cast<std::streamsize>(px.numel()));
  std::ofstream lf(labels, std::ios::binary);
  auto lb = labels_int.contiguous().to(torch::kInt64);
  const bool wide = lb.numel() > 0 && (lb.max().item<int64_t>() > 255 || lb.min().item<int64_t>() < 0);
  write_be32(lf, wide ? 0x00000C01U : 0x00000801U);
  write_be32(lf, static_cast<uint32_t>(lb.size(0)));
  if (wide) {
    auto acc = lb.accessor<int64_t, 1>();
    for (int64_t i = 0; i < lb.size(0); ++i) {
      write_be32(lf, static_cast<uint32_t>(static_cast<int32_t>(acc[i])));
    }
  } else {
    auto u8 = lb.to(torch::kUInt8);
    lf.write(static_cast<const char*>(u8.data_ptr()), static_cast<std::streamsize>(u8.numel()));
  }
}

// ---------------------------------------------------------------------------
// Splits

json SplitPolicy::to_json() const {
  return {{"private_classes", private_classes}, {"private_per_class", private_per_class},
          {"holdout_per_class", holdout_per_class}, {"public_dataset", public_dataset},
          {"public_classes", public_classes},     {"public_size", public_size},
          {"seed", seed}};
}

SplitPolicy SplitPolicy::from_json(const json& j) {
  SplitPolicy p;
  p.private_classes = j.value("private_classes", p.private_classes);
  p.private_per_class = j.value("private_per_class", p.private_per_class);
  p.holdout_per_class = j.value("holdout_per_class", p.holdout_per_class);
  p.public_dataset = j.value("public_dataset", p.public_dataset);
  p.public_classes = j.value("public_classes", p.public_classes);
  p.public_size = j.value("public_size", p.public_size);
  p.seed = j.value("seed", p.seed);
  return p;
}

std::string DatasetSplit::digest() const {
  Sha256 h;
  h.update(private_images).update(private_labels).update(holdout_images).update(holdout_labels);
  h.update(public_images);
  h.update(std::to_string(num_private_classes));
  return h.hex();
}

DatasetSplit load_and_split(const DatasetRegistry& registry, const std::string& dataset_id,
                            const SplitPolicy& policy) {
  const auto n_src = registry.num_classes(dataset_id);
  std::vector<int64_t> priv = policy.private_classes;
  if (priv.empty()) {
    priv.resize(static_cast<size_t>(n_src));
    std::iota(priv.begin(), priv.end(), 0);
  }
  if (std::set<int64_t>(priv.begin(), priv.end()).size() != priv.size()) {
    throw ConfigError("split policy lists a private class twice");
  }
  const auto pub_id = policy.public_dataset.empty() ? dataset_id : policy.public_dataset;
  std::vector<int64_t> pub = policy.public_classes;
  if (pub_id == dataset_id) {
    if (pub.empty()) {
      for (int64_t c = 0; c < n_src; ++c) {
        if (std::find(priv.begin(), priv.end(), c) == priv.end()) {
          pub.push_back(c);
        }
      }
    }
    for (auto c : pub) {
      if (std::find(priv.begin(), priv.end(), c) != priv.end()) {
        throw ConfigError("public class " + std::to_string(c) +
                          " overlaps the private classes of the same dataset");
      }
    }
    if (pub.empty()) {
      throw DataError("split policy yields an empty public set");
    }
  }

  // Private side.
  const bool all_private = policy.private_per_class < 0;
  const auto want = all_private ? -1 : policy.private_per_class + policy.holdout_per_class;
  auto src = registry.load(dataset_id, priv, want, derive_seed(policy.seed, 1));
  auto order = shuffled_order(src.size(), derive_seed(policy.seed, 2));
  std::vector<int64_t> train_idx;
  std::vector<int64_t> hold_idx;
  std::vector<int64_t> train_lab;
  std::vector<int64_t> hold_lab;
  for (size_t k = 0; k < priv.size(); ++k) {
    auto hold = take_per_class(src.labels, order, priv[k], 0, policy.holdout_per_class);
    auto train = take_per_class(src.labels, order, priv[k], static_cast<int64_t>(hold.size()),
                                all_private ? -1 : policy.private_per_class);
    for (auto i : hold) {
      hold_idx.push_back(i);
      hold_lab.push_back(static_cast<int64_t>(k));
    }
    for (auto i : train) {
      train_idx.push_back(i);
      train_lab.push_back(static_cast<int64_t>(k));
    }
  }
  if (train_idx.empty()) {
    throw DataError("split policy yields an empty private set");
  }

  // Public side: labels are dropped right here.
  const auto pub_classes = pub.empty() ? registry.num_classes(pub_id) : static_cast<int64_t>(pub.size());
  const auto per_class =
      policy.public_size < 0 ? -1 : (policy.public_size + pub_classes - 1) / std::max<int64_t>(pub_classes, 1);
  auto pub_src = registry.load(pub_id, pub, per_class, derive_seed(policy.seed, 3));
  auto pub_order = shuffled_order(pub_src.size(), derive_seed(policy.seed, 4));
  if (policy.public_size >= 0 && static_cast<int64_t>(pub_order.size()) > policy.public_size) {
    pub_order.resize(static_cast<size_t>(policy.public_size));
  }
  if (pub_order.empty()) {
    throw DataError("split policy yields an empty public set");
  }

  DatasetSplit split;
  split.private_images = src.images.index_select(0, index_tensor(train_idx));
  split.private_labels = index_tensor(train_lab);
  split.holdout_images = hold_idx.empty() ? torch::empty({0, src.images.size(1), src.images.size(2),
                                                          src.images.size(3)})
                                          : src.images.index_select(0, index_tensor(hold_idx));
  split.holdout_labels = index_tensor(hold_lab);
  split.public_images = pub_src.images.index_select(0, index_tensor(pub_order));
  split.num_private_classes = static_cast<int64_t>(priv.size());
  split.image_shape = {src.images.size(2), src.images.size(3), src.images.size(1)};
  split.pixel_range = {-1.0F, 1.0F};
  if (split.public_images.size(1) != split.image_shape.channels ||
      split.public_images.size(2) != split.image_shape.height ||
      split.public_images.size(3) != split.image_shape.width) {
    throw DataError("public dataset image shape differs from the private dataset");
  }
  return split;
}

// ---------------------------------------------------------------------------
// Pseudo-labeled datasets

std::string to_string(LabelSource s) {
  return s == LabelSource::PublicRelabeled ? "public_relabeled" : "synthetic";
}

LabelSource label_source_from_string(const std::string& s) {
  if (s == "public_relabeled") {
    return LabelSource::PublicRelabeled;
  }
  if (s == "synthetic") {
    return LabelSource::Synthetic;
  }
  throw DataError("unknown label source '" + s + "'");
}

std::vector<int64_t> histogram(const torch::Tensor& labels, int64_t num_classes) {
  std::vector<int64_t> h(static_cast<size_t>(num_classes), 0);
  if (labels.numel() == 0) {
    return h;
  }
  auto counts = torch::bincount(labels.to(torch::kInt64), {}, num_classes);
  auto acc = counts.accessor<int64_t, 1>();
  for (int64_t c = 0; c < num_classes; ++c) {
    h[static_cast<size_t>(c)] = acc[c];
  }
  return h;
}

PseudoLabeledDataset PseudoLabeledDataset::make(torch::Tensor images, torch::Tensor labels,
                                                LabelSource source, int64_t num_classes) {
  if (images.size(0) != labels.size(0)) {
    throw DataError("pseudo-labeled dataset: image/label count mismatch");
  }
  labels = labels.to(torch::kInt64);
  if (labels.numel() > 0 &&
      (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= num_classes)) {
    throw DataError("pseudo label outside [0, N)");
  }
  PseudoLabeledDataset ds;
  ds.images = std::move(images);
  ds.labels = std::move(labels);
  ds.source = source;
  ds.num_classes = num_classes;
  ds.class_histogram = data::histogram(ds.labels, num_classes);
  return ds;
}

PseudoLabeledDataset build_pseudo_labeled_public(const torch::Tensor& public_images,
                                                 oracle::HardLabelOracle& oracle,
                                                 int64_t batch_size) {
  const auto n = public_images.size(0);
  std::vector<torch::Tensor> labels;
  for (int64_t i = 0; i < n; i += batch_size) {
    auto batch = public_images.slice(0, i, std::min(n, i + batch_size));
    labels.push_back(oracle.query(batch, oracle::QueryPhase::PublicRelabeling));
  }
  auto all = labels.empty() ? torch::empty({0}, torch::kInt64) : torch::cat(labels);
  return PseudoLabeledDataset::make(public_images, all, LabelSource::PublicRelabeled,
                                    oracle.num_classes());
}

json AugmentationPolicy::to_json() const {
  return {{"max_shift", max_shift},
          {"horizontal_flip", horizontal_flip},
          {"contrast_jitter", contrast_jitter},
          {"noise_std", noise_std},
          {"seed", seed}};
}

AugmentationPolicy AugmentationPolicy::from_json(const json& j) {
  AugmentationPolicy p;
  p.max_shift = j.value("max_shift", p.max_shift);
  p.horizontal_flip = j.value("horizontal_flip", p.horizontal_flip);
  p.contrast_jitter = j.value("contrast_jitter", p.contrast_jitter);
  p.noise_std = j.value("noise_std", p.noise_std);
  p.seed = j.value("seed", p.seed);
  return p;
}

BalancedDataset balance_by_augmentation(const PseudoLabeledDataset& ds, int64_t target_per_class,
                                        const AugmentationPolicy& policy) {
  if (ds.source != LabelSource::PublicRelabeled) {
    throw DataError("balance_by_augmentation expects a public relabeled dataset");
  }
  const auto largest = ds.class_histogram.empty()
                           ? 0
                           : *std::max_element(ds.class_histogram.begin(), ds.class_histogram.end());
  if (target_per_class < largest) {
    throw ConfigError("target_per_class " + std::to_string(target_per_class) +
                      " is below the largest class count " + std::to_string(largest));
  }
  auto gen = make_generator(policy.seed);
  std::vector<torch::Tensor> images{ds.images};
  std::vector<torch::Tensor> labels{ds.labels};
  CoverageReport cov;
  cov.histogram_before = ds.class_histogram;
  for (int64_t c = 0; c < ds.num_classes; ++c) {
    const auto have = ds.class_histogram[static_cast<size_t>(c)];
    if (have == 0) {
      cov.empty_classes.push_back(c);
      continue;
    }
    const auto need = target_per_class - have;
    if (need <= 0) {
      continue;
    }
    auto members = (ds.labels == c).nonzero().flatten();
    auto pick = members.index_select(0, torch::randint(have, {need}, gen, torch::kInt64));
    auto x = ds.images.index_select(0, pick).clone();
    const auto s = policy.max_shift;
    if (s > 0) {
      auto shifts = torch::randint(-s, s + 1, {need, 2}, gen, torch::kInt64);
      auto sa = shifts.accessor<int64_t, 2>();
      auto padded = torch::constant_pad_nd(x, {s, s, s, s}, -1.0);
      const auto h = x.size(2);
      const auto w = x.size(3);
      for (int64_t i = 0; i < need; ++i) {
        x[i] = padded[i]
                   .slice(1, s + sa[i][0], s + sa[i][0] + h)
                   .slice(2, s + sa[i][1], s + sa[i][1] + w);
      }
    }
    if (policy.horizontal_flip) {
      auto flip = torch::rand({need}, gen) < 0.5;
      x = torch::where(flip.view({need, 1, 1, 1}), x.flip({3}), x);
    }
    if (policy.contrast_jitter > 0) {
      auto gain = 1.0 + policy.contrast_jitter * torch::randn({need, 1, 1, 1}, gen);
      x = x * gain;
    }
    if (policy.noise_std > 0) {
      x = x + policy.noise_std * torch::randn(x.sizes(), gen);
    }
    images.push_back(x.clamp(-1.0, 1.0));
    labels.push_back(torch::full({need}, c, torch::kInt64));
  }
  auto out = PseudoLabeledDataset::make(torch::cat(images), torch::cat(labels),
                                        LabelSource::PublicRelabeled, ds.num_classes);
  cov.histogram_after = out.class_histogram;
  return {std::move(out), std::move(cov)};
}

double coefficient_of_variation(const std::vector<int64_t>& h) {
  if (h.empty()) {
    return 0.0;
  }
  const double n = static_cast<double>(h.size());
  const double mean = std::accumulate(h.begin(), h.end(), 0.0) / n;
  if (mean == 0.0) {
    return 0.0;
  }
  double var = 0.0;
  for (auto v : h) {
    var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  }
  return std::sqrt(var / n) / mean;
}

// ---------------------------------------------------------------------------
// Persistence

void save_pseudo_labeled(const PseudoLabeledDataset& ds, const fs::path& dir,
                         const std::string& name, const json& metadata) {
  std::vector<std::string> labels;
  std::vector<std::string> tags;
  auto lab = ds.labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < ds.size(); ++i) {
    labels.push_back(std::to_string(lab[i]));
    tags.push_back(to_string(ds.source));
  }
  json m = metadata.is_object() ? metadata : json::object();
  m["kind"] = "pseudo_labeled_dataset";
  m["source"] = to_string(ds.source);
  m["num_classes"] = ds.num_classes;
  m["class_histogram"] = ds.class_histogram;
  m["labels_digest"] = tensor_digest(ds.labels);
  write_container(dir, name, ds.images, labels, tags, m);
}

PseudoLabeledDataset load_pseudo_labeled(const fs::path& dir, const std::string& name) {
  auto c = read_container(dir, name);
  std::vector<int64_t> labels;
  labels.reserve(c.labels.size());
  for (const auto& l : c.labels) {
    labels.push_back(std::stoll(l));
  }
  return PseudoLabeledDataset::make(c.images, index_tensor(labels),
                                    label_source_from_string(c.manifest.at("source")),
                                    c.manifest.at("num_classes").get<int64_t>());
}

void save_split(const DatasetSplit& split, const fs::path& dir, const json& metadata) {
  auto images = torch::cat({split.private_images, split.holdout_images, split.public_images});
  std::vector<std::string> labels;
  std::vector<std::string> tags;
  auto pl = split.private_labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < split.private_labels.size(0); ++i) {
    labels.push_back(std::to_string(pl[i]));
    tags.emplace_back("private");
  }
  auto hl = split.holdout_labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < split.holdout_labels.size(0); ++i) {
    labels.push_back(std::to_string(hl[i]));
    tags.emplace_back("holdout");
  }
  for (int64_t i = 0; i < split.public_images.size(0); ++i) {
    labels.emplace_back();
    tags.emplace_back("public");
  }
  json m = metadata.is_object() ? metadata : json::object();
  m["kind"] = "dataset_split";
  m["num_private_classes"] = split.num_private_classes;
  m["image_shape"] = {split.image_shape.height, split.image_shape.width, split.image_shape.channels};
  m["pixel_range"] = {split.pixel_range.lo, split.pixel_range.hi};
  m["split_digest"] = split.digest();
  write_container(dir, "split", images, labels, tags, m);
}

DatasetSplit load_split(const fs::path& dir) {
  auto c = read_container(dir, "split");
  std::vector<int64_t> pidx;
  std::vector<int64_t> hidx;
  std::vector<int64_t> uidx;
  std::vector<int64_t> plab;
  std::vector<int64_t> hlab;
  for (size_t i = 0; i < c.tags.size(); ++i) {
    const auto& t = c.tags[i];
    if (t == "private") {
      pidx.push_back(static_cast<int64_t>(i));
      plab.push_back(std::stoll(c.labels[i]));
    } else if (t == "holdout") {
      hidx.push_back(static_cast<int64_t>(i));
      hlab.push_back(std::stoll(c.labels[i]));
    } else {
      uidx.push_back(static_cast<int64_t>(i));
    }
  }
  DatasetSplit s;
  s.private_images = c.images.index_select(0, index_tensor(pidx));
  s.private_labels = index_tensor(plab);
  s.holdout_images = c.images.index_select(0, index_tensor(hidx));
  s.holdout_labels = index_tensor(hlab);
  s.public_images = c.images.index_select(0, index_tensor(uidx));
  s.num_private_classes = c.manifest.at("num_private_classes").get<int64_t>();
  auto shape = c.manifest.at("image_shape").get<std::vector<int64_t>>();
  s.image_shape = {shape[0], shape[1], shape[2]};
  auto range = c.manifest.at("pixel_range").get<std::vector<float>>();
  s.pixel_range = {range[0], range[1]};
  if (s.digest() != c.manifest.at("split_digest").get<std::string>()) {
    throw DataError("split digest mismatch in " + dir.string());
  }
  return s;
}

}  // namespace lokt::data
