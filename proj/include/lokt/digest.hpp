#pragma once

#include <torch/torch.h>

#include <string>
#include <string_view>

namespace lokt {

/// Incremental SHA-256 producing lowercase hex digests. Used for config,
/// dataset and report fingerprints in manifests.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::string_view bytes);
  /// Hashes dtype, shape and the contiguous CPU bytes of `t`.
  Sha256& update(const torch::Tensor& t);
  std::string hex();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view bytes);
std::string tensor_digest(const torch::Tensor& t);

}  // namespace lokt
